#include "resgcn/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "resgcn/errors.hpp"

#ifndef RESGCN_DEFAULT_DATA_DIR
#define RESGCN_DEFAULT_DATA_DIR "data"
#endif

namespace resgcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary dataset I/O assumes a little-endian host");

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing file " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <class T>
std::vector<T> decode(const std::vector<char>& bytes, const fs::path& path, std::size_t expected) {
  if (bytes.size() % sizeof(T) != 0) throw LoadError(path.string() + " has a truncated record");
  const std::size_t count = bytes.size() / sizeof(T);
  if (expected != static_cast<std::size_t>(-1) && count != expected) {
    throw LoadError(path.string() + " holds " + std::to_string(count) + " values, manifest implies " +
                    std::to_string(expected));
  }
  std::vector<T> out(count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template <class T>
void write_bytes(const fs::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
}

std::vector<std::size_t> read_mask(const json& masks, const char* key, std::size_t num_nodes) {
  if (!masks.contains(key) || !masks[key].is_array()) throw LoadError(std::string("masks.json lacks array '") + key + "'");
  std::vector<std::size_t> out;
  for (const auto& v : masks[key]) {
    if (!v.is_number_unsigned()) throw LoadError(std::string("masks.json '") + key + "' holds a non-index value");
    const auto idx = v.get<std::size_t>();
    if (idx >= num_nodes) {
      throw LoadError(std::string("masks.json '") + key + "' index " + std::to_string(idx) + " out of range");
    }
    out.push_back(idx);
  }
  return out;
}

SparseMatrix symmetric_adjacency(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [u, v] : edges) {
    if (u == v) continue;
    if (seen.insert({u, v}).second) triplets.emplace_back(u, v, 1.0);
    if (seen.insert({v, u}).second) triplets.emplace_back(v, u, 1.0);
  }
  return SparseMatrix::from_triplets(n, n, std::move(triplets));
}

}  // namespace

CitationDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("dataset directory not found: " + dir.string());
  const json manifest = read_json(dir / "manifest.json");
  std::size_t n = 0, d = 0, c = 0;
  std::string name;
  try {
    name = manifest.at("name").get<std::string>();
    n = manifest.at("num_nodes").get<std::size_t>();
    d = manifest.at("num_features").get<std::size_t>();
    c = manifest.at("num_classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw LoadError("manifest.json: " + std::string(e.what()));
  }

  CitationDataset ds;
  ds.name = name;
  ds.num_classes = c;

  const auto feats = decode<float>(read_bytes(dir / "features.bin"), dir / "features.bin", n * d);
  std::vector<double> wide(feats.begin(), feats.end());
  ds.features = Tensor({n, d}, std::move(wide));

  const auto labels = decode<std::uint32_t>(read_bytes(dir / "labels.bin"), dir / "labels.bin", n);
  ds.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= c) {
      throw LoadError("label " + std::to_string(ds.labels[i]) + " of node " + std::to_string(i) + " outside [0, " +
                      std::to_string(c) + ")");
    }
  }

  const auto raw_edges = decode<std::uint32_t>(read_bytes(dir / "edges.bin"), dir / "edges.bin", static_cast<std::size_t>(-1));
  if (raw_edges.size() % 2 != 0) throw LoadError("edges.bin holds an odd number of indices");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(raw_edges.size() / 2);
  for (std::size_t k = 0; k < raw_edges.size(); k += 2) {
    if (raw_edges[k] >= n || raw_edges[k + 1] >= n) {
      throw LoadError("edge (" + std::to_string(raw_edges[k]) + ", " + std::to_string(raw_edges[k + 1]) +
                      ") references a node outside [0, " + std::to_string(n) + ")");
    }
    edges.emplace_back(raw_edges[k], raw_edges[k + 1]);
  }
  ds.adjacency = symmetric_adjacency(n, edges);

  const json masks = read_json(dir / "masks.json");
  ds.train = read_mask(masks, "train", n);
  ds.val = read_mask(masks, "val", n);
  ds.test = read_mask(masks, "test", n);

  validate_dataset(ds);
  return ds;
}

void save_dataset(const CitationDataset& ds, const fs::path& dir) {
  validate_dataset(ds);
  fs::create_directories(dir);
  const json manifest = {{"name", ds.name},
                         {"num_nodes", ds.num_nodes()},
                         {"num_features", ds.num_features()},
                         {"num_classes", ds.num_classes}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";

  std::vector<float> feats(ds.features.data().begin(), ds.features.data().end());
  write_bytes(dir / "features.bin", feats);

  std::vector<std::uint32_t> labels(ds.labels.begin(), ds.labels.end());
  write_bytes(dir / "labels.bin", labels);

  std::vector<std::uint32_t> edges;
  const SparseMatrix& a = ds.adjacency;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      if (a.col_idx()[k] > r) {
        edges.push_back(static_cast<std::uint32_t>(r));
        edges.push_back(static_cast<std::uint32_t>(a.col_idx()[k]));
      }
    }
  }
  write_bytes(dir / "edges.bin", edges);

  const json masks = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  std::ofstream(dir / "masks.json") << masks.dump() << "\n";
}

void validate_dataset(const CitationDataset& ds) {
  const std::size_t n = ds.num_nodes();
  if (ds.features.rank() != 2 || ds.features.rows() != n) {
    throw LoadError("features have shape " + to_string(ds.features.shape()) + " for " + std::to_string(n) + " nodes");
  }
  if (ds.adjacency.rows() != n || ds.adjacency.cols() != n) throw LoadError("adjacency does not match node count");
  if (n == 0) throw LoadError("dataset has no nodes");
  const std::size_t max_label = *std::max_element(ds.labels.begin(), ds.labels.end());
  if (ds.num_classes != max_label + 1) {
    throw LoadError("num_classes is " + std::to_string(ds.num_classes) + " but labels span " +
                    std::to_string(max_label + 1) + " classes");
  }
  const SparseMatrix& a = ds.adjacency;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      const std::size_t c = a.col_idx()[k];
      if (c == r) throw LoadError("adjacency has a self-loop at node " + std::to_string(r));
      if (a.values()[k] != 1.0) throw LoadError("adjacency is not binary at row " + std::to_string(r));
      if (a.at(c, r) != 1.0) throw LoadError("adjacency is not symmetric at (" + std::to_string(r) + ", " + std::to_string(c) + ")");
    }
  }
  std::vector<int> owner(n, -1);
  const std::vector<std::size_t>* masks[] = {&ds.train, &ds.val, &ds.test};
  const char* names[] = {"train", "val", "test"};
  for (int m = 0; m < 3; ++m) {
    if (masks[m]->empty()) throw LoadError(std::string(names[m]) + " mask is empty");
    for (std::size_t idx : *masks[m]) {
      if (idx >= n) throw LoadError(std::string(names[m]) + " mask index out of range");
      if (owner[idx] != -1) {
        throw LoadError("node " + std::to_string(idx) + " appears in both " + names[owner[idx]] + " and " + names[m] +
                        " masks");
      }
      owner[idx] = m;
    }
  }
}

CitationDataset make_tiny10() {
  CitationDataset ds;
  ds.name = "tiny10";
  ds.num_classes = 2;
  // Two 5-node rings joined by the bridge 4-5. Feature 0/1 flags the class,
  // features 2/3 are weakly informative noise.
  ds.features = Tensor::matrix({{1.0, 0.0, 0.25, 0.5},
                                {1.0, 0.0, 0.5, 0.25},
                                {1.0, 0.0, 0.75, 0.0},
                                {1.0, 0.0, 0.0, 0.75},
                                {1.0, 0.0, 0.5, 0.5},
                                {0.0, 1.0, 0.5, 0.5},
                                {0.0, 1.0, 0.25, 0.75},
                                {0.0, 1.0, 0.75, 0.25},
                                {0.0, 1.0, 0.0, 0.5},
                                {0.0, 1.0, 0.5, 0.0}});
  ds.labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  ds.adjacency = symmetric_adjacency(10, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {4, 5},
                                          {5, 6}, {6, 7}, {7, 8}, {8, 9}, {5, 9}});
  ds.train = {0, 1, 5, 6};
  ds.val = {2, 7, 8};
  ds.test = {3, 4, 9};
  return ds;
}

fs::path resolve_dataset_path(const std::string& name_or_path) {
  const fs::path direct(name_or_path);
  if (fs::is_directory(direct)) return direct;
  if (const char* env = std::getenv("RESGCN_DATA_DIR"); env != nullptr && *env != '\0') {
    const fs::path candidate = fs::path(env) / name_or_path;
    if (fs::is_directory(candidate)) return candidate;
  }
  const fs::path bundled = fs::path(RESGCN_DEFAULT_DATA_DIR) / name_or_path;
  if (fs::is_directory(bundled)) return bundled;
  throw LoadError("dataset '" + name_or_path + "' not found (looked in ./, $RESGCN_DATA_DIR and " +
                  std::string(RESGCN_DEFAULT_DATA_DIR) + ")");
}

}  // namespace resgcn
