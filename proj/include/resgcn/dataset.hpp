#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "resgcn/sparse.hpp"
#include "resgcn/tensor.hpp"

namespace resgcn {

/// Node-classification graph with fixed train/val/test splits.
struct CitationDataset {
  std::string name;
  Tensor features;                  // n x d
  std::vector<std::size_t> labels;  // one class index per node
  SparseMatrix adjacency;           // binary, symmetric, zero diagonal
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::size_t num_classes = 0;

  std::size_t num_nodes() const { return labels.size(); }
  std::size_t num_features() const { return features.cols(); }
};

/// Reads the on-disk layout:
///   manifest.json  {name, num_nodes, num_features, num_classes}
///   features.bin   row-major little-endian float32, widened to double
///   labels.bin     little-endian uint32 per node
///   edges.bin      little-endian uint32 pairs, each undirected edge once
///   masks.json     {train: [...], val: [...], test: [...]}
/// Edges are symmetrized and self-loops dropped. Throws LoadError.
CitationDataset load_dataset(const std::filesystem::path& dir);

/// Writes the layout read by load_dataset. Edges are emitted once each as
/// (i, j) with i < j in row-major order.
void save_dataset(const CitationDataset& dataset, const std::filesystem::path& dir);

/// Checks the dataset invariants; throws LoadError naming the first violation.
void validate_dataset(const CitationDataset& dataset);

/// The 10-node, 4-feature, 2-class fixture shipped under data/tiny10.
CitationDataset make_tiny10();

/// Resolves a dataset argument: an existing directory is used as-is,
/// otherwise `name` is looked up under $RESGCN_DATA_DIR and then under the
/// data directory compiled into the build.
std::filesystem::path resolve_dataset_path(const std::string& name_or_path);

}  // namespace resgcn
