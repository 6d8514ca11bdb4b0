#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "grad_check.hpp"
#include "resgcn/dataset.hpp"
#include "resgcn/errors.hpp"
#include "resgcn/sparse.hpp"

using namespace resgcn;
using resgcn::testing::random_graph;
using resgcn::testing::random_tensor;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("resgcn-graph-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("CSR validation") {
  CHECK_NOTHROW(SparseMatrix(2, 2, {0, 1, 2}, {1, 0}, {1.0, 1.0}));
  CHECK_THROWS_AS(SparseMatrix(2, 2, {0, 2, 1}, {1, 0}, {1.0, 1.0}), ContractError);
  CHECK_THROWS_AS(SparseMatrix(2, 2, {0, 2, 2}, {1, 1}, {1.0, 1.0}), ContractError);
  CHECK_THROWS_AS(SparseMatrix(2, 2, {0, 1, 2}, {2, 0}, {1.0, 1.0}), ContractError);
}

TEST_CASE("add_self_loops") {
  const SparseMatrix empty = SparseMatrix::from_triplets(2, 2, {});
  CHECK(add_self_loops(empty).to_dense() == Tensor::matrix({{1, 0}, {0, 1}}));
  const SparseMatrix path = SparseMatrix::from_dense(Tensor::matrix({{0, 1}, {1, 0}}));
  const SparseMatrix once = add_self_loops(path);
  CHECK(once.to_dense() == Tensor::matrix({{1, 1}, {1, 1}}));
  CHECK(add_self_loops(once) == once);
  CHECK_THROWS_AS(add_self_loops(SparseMatrix::from_triplets(2, 3, {})), ContractError);
}

TEST_CASE("degree_normalize examples") {
  const SparseMatrix path = add_self_loops(SparseMatrix::from_dense(Tensor::matrix({{0, 1}, {1, 0}})));
  CHECK(degree_normalize(path, Normalization::Row).to_dense() == Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));
  CHECK(degree_normalize(path, Normalization::Symmetric).to_dense() == Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));

  Tensor star({4, 4}, 0.0);
  for (std::size_t leaf = 1; leaf < 4; ++leaf) star(0, leaf) = star(leaf, 0) = 1.0;
  const Tensor op = degree_normalize(add_self_loops(SparseMatrix::from_dense(star)), Normalization::Row).to_dense();
  for (std::size_t c = 0; c < 4; ++c) CHECK(op(0, c) == 0.25);
  for (std::size_t leaf = 1; leaf < 4; ++leaf) {
    CHECK(op(leaf, 0) == 0.5);
    CHECK(op(leaf, leaf) == 0.5);
  }
}

TEST_CASE("degree_normalize rejects a zero-degree row by index") {
  const SparseMatrix a = SparseMatrix::from_triplets(3, 3, {{0, 1, 1.0}, {1, 0, 1.0}});
  try {
    degree_normalize(a, Normalization::Row);
    FAIL("expected DegenerateGraphError");
  } catch (const DegenerateGraphError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("normalized operator properties on random graphs") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const SparseMatrix a = random_graph(12, rng, 8);
    const SparseMatrix tilde = add_self_loops(a);
    const SparseMatrix row = degree_normalize(tilde, Normalization::Row);
    const SparseMatrix sym = degree_normalize(tilde, Normalization::Symmetric);
    CHECK(row.row_ptr() == tilde.row_ptr());
    CHECK(row.col_idx() == tilde.col_idx());
    CHECK(sym.col_idx() == tilde.col_idx());
    for (std::size_t r = 0; r < row.rows(); ++r) {
      double s = 0.0;
      for (std::size_t k = row.row_ptr()[r]; k < row.row_ptr()[r + 1]; ++k) s += row.values()[k];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const Tensor d = sym.to_dense();
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t j = 0; j < 12; ++j) CHECK(std::abs(d(i, j) - d(j, i)) < 1e-12);
    }
  }
}

TEST_CASE("spmm examples") {
  Rng rng(22);
  const Tensor h = random_tensor({5, 3}, rng);
  CHECK(spmm(SparseMatrix::identity(5), h) == h);

  const SparseMatrix op = propagation_operator(random_graph(5, rng), Normalization::Row);
  Tensor constant({5, 2});
  for (std::size_t r = 0; r < 5; ++r) {
    constant(r, 0) = 3.0;
    constant(r, 1) = -1.5;
  }
  const Tensor out = spmm(op, constant);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(out(r, 0) == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(out(r, 1) == doctest::Approx(-1.5).epsilon(1e-14));
  }

  const SparseMatrix a8 = propagation_operator(random_graph(8, rng, 6), Normalization::Symmetric);
  const Tensor h8 = random_tensor({8, 4}, rng);
  const Tensor dense = a8.to_dense();
  const Tensor got = spmm(a8, h8);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 8; ++k) ref += dense(i, k) * h8(k, j);
      CHECK(std::abs(got(i, j) - ref) < 1e-12);
    }
  }
  CHECK_THROWS_AS(spmm(a8, random_tensor({5, 4}, rng)), DimensionError);
}

TEST_CASE("spmm gradient scatters through the transpose") {
  Rng rng(23);
  const SparseMatrix op = propagation_operator(random_graph(6, rng), Normalization::Row);
  const Tensor w = random_tensor({6, 3}, rng);
  const auto r = testing::gradient_check(
      [&](Tape&, std::span<const Var> v) { return testing::probe(spmm(op, v[0]), w); }, {random_tensor({6, 3}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("tiny10 fixture on disk matches the generator") {
  const CitationDataset ds = load_dataset(resolve_dataset_path("tiny10"));
  const CitationDataset ref = make_tiny10();
  CHECK(ds.num_nodes() == 10);
  CHECK(ds.num_features() == 4);
  CHECK(ds.num_classes == 2);
  CHECK(ds.train.size() == 4);
  CHECK(ds.val.size() == 3);
  CHECK(ds.test.size() == 3);
  CHECK(ds.labels == ref.labels);
  CHECK(ds.adjacency == ref.adjacency);
  CHECK(ds.train == ref.train);
  CHECK_NOTHROW(validate_dataset(ds));
}

TEST_CASE("save then load round-trips bit-exactly") {
  const CitationDataset ds = load_dataset(resolve_dataset_path("tiny10"));
  const auto dir = scratch("roundtrip");
  save_dataset(ds, dir);
  const CitationDataset back = load_dataset(dir);
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
  CHECK(back.adjacency == ds.adjacency);
  CHECK(back.val == ds.val);
  CHECK(back.test == ds.test);
  CHECK(back.name == ds.name);
  for (const char* f : {"features.bin", "labels.bin", "edges.bin", "masks.json", "manifest.json"}) {
    std::ifstream a(resolve_dataset_path("tiny10") / f, std::ios::binary);
    std::ifstream b(dir / f, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK_MESSAGE(sa == sb, f);
  }
}

TEST_CASE("directed edges are symmetrized on load") {
  CitationDataset ds = make_tiny10();
  const auto dir = scratch("directed");
  save_dataset(ds, dir);
  std::ofstream(dir / "edges.bin", std::ios::binary | std::ios::trunc)
      .write("\x01\x00\x00\x00\x00\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00", 16);
  const CitationDataset back = load_dataset(dir);
  CHECK(back.adjacency.at(0, 1) == 1.0);
  CHECK(back.adjacency.at(1, 0) == 1.0);
  CHECK(back.adjacency.at(2, 2) == 0.0);
  CHECK(back.adjacency.nnz() == 2);
}

TEST_CASE("load errors are descriptive") {
  CHECK_THROWS_AS(load_dataset(scratch("missing")), LoadError);

  const CitationDataset ds = make_tiny10();
  {
    const auto dir = scratch("nolabels");
    save_dataset(ds, dir);
    std::filesystem::remove(dir / "labels.bin");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("labels.bin"), LoadError);
  }
  {
    const auto dir = scratch("short");
    save_dataset(ds, dir);
    std::ofstream(dir / "features.bin", std::ios::binary | std::ios::trunc).write("\0\0\0\0", 4);
    CHECK_THROWS_AS(load_dataset(dir), LoadError);
  }
  {
    const auto dir = scratch("badlabel");
    save_dataset(ds, dir);
    std::ofstream(dir / "labels.bin", std::ios::binary | std::ios::trunc)
        .write("\x09\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00"
               "\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00",
               40);
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("label 9"), LoadError);
  }
}

TEST_CASE("validate_dataset catches broken invariants") {
  CitationDataset overlap = make_tiny10();
  overlap.val.push_back(overlap.train.front());
  CHECK_THROWS_AS(validate_dataset(overlap), LoadError);

  CitationDataset classes = make_tiny10();
  classes.num_classes = 3;
  CHECK_THROWS_AS(validate_dataset(classes), LoadError);

  CitationDataset asym = make_tiny10();
  asym.adjacency = SparseMatrix::from_triplets(10, 10, {{0, 1, 1.0}});
  CHECK_THROWS_AS(validate_dataset(asym), LoadError);
}

TEST_CASE("dataset lookup honours RESGCN_DATA_DIR") {
  const auto root = scratch("envroot");
  save_dataset(make_tiny10(), root / "elsewhere");
  setenv("RESGCN_DATA_DIR", root.c_str(), 1);
  CHECK(resolve_dataset_path("elsewhere") == root / "elsewhere");
  unsetenv("RESGCN_DATA_DIR");
  CHECK_THROWS_AS(resolve_dataset_path("no-such-dataset"), LoadError);
}
