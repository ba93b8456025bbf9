#include "unit/helpers.hpp"

#include "speccausal/dataset.hpp"
#include "speccausal/error.hpp"

#include <doctest.h>

#include <fstream>

using namespace speccausal;
using testutil::gaussian;
using testutil::max_abs;

namespace {

Dataset small_iv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.setting = Setting::iv;
  d.columns["x"] = gaussian(static_cast<Eigen::Index>(n), 2, rng);
  d.columns["z"] = gaussian(static_cast<Eigen::Index>(n), 1, rng);
  d.columns["y"] = gaussian(static_cast<Eigen::Index>(n), 1, rng);
  d.truth = gaussian(static_cast<Eigen::Index>(n), 1, rng).col(0);
  d.metadata = {{"generator", "test"}, {"seed", seed}};
  return d;
}

}  // namespace

TEST_CASE("validation catches missing and ragged columns") {
  Dataset d = small_iv(5, 1);
  CHECK_NOTHROW(d.validate());
  d.columns["z"] = Matrix::Zero(4, 1);
  CHECK_THROWS_AS(d.validate(), DimensionError);
  d = small_iv(5, 1);
  d.columns.erase("y");
  CHECK_THROWS_AS(d.validate(), DimensionError);
  CHECK_NOTHROW(d.validate(false));
  d = small_iv(5, 1);
  d.setting = Setting::ivoc;
  CHECK_THROWS_AS(d.validate(), DimensionError);
}

TEST_CASE("required columns per setting") {
  CHECK(required_columns(Setting::iv) == std::vector<std::string>{"x", "z", "y"});
  CHECK(required_columns(Setting::ivoc).size() == 4);
  CHECK(required_columns(Setting::pcl, false).size() == 3);
  CHECK(parse_setting("pcl") == Setting::pcl);
  CHECK_THROWS_AS(parse_setting("foo"), ConfigError);
}

TEST_CASE("subset keeps rows, truth and weights aligned") {
  Dataset d = small_iv(6, 2);
  d.weights = Vector::LinSpaced(6, 1, 6);
  const Dataset s = d.subset({4, 1});
  CHECK(s.rows() == 2);
  CHECK(max_abs(s.col("x").row(0) - d.col("x").row(4)) == 0.0);
  CHECK((*s.truth)(1) == (*d.truth)(1));
  CHECK((*s.weights)(0) == 5.0);
}

TEST_CASE("normalized weights") {
  Dataset d = small_iv(4, 3);
  CHECK((d.normalized_weights().array() == 0.25).all());
  d.weights = (Vector(4) << 1, 1, 2, 0).finished();
  const Vector w = d.normalized_weights();
  CHECK(w(2) == 0.5);
  CHECK(w.sum() == doctest::Approx(1.0));
}

TEST_CASE("weighted cross moment equals the weighted sum of outer products") {
  Rng rng(4);
  const Matrix A = gaussian(5, 2, rng), B = gaussian(5, 3, rng);
  const Vector w = (Vector(5) << 0.1, 0.2, 0.3, 0.15, 0.25).finished();
  Matrix brute = Matrix::Zero(2, 3);
  for (Eigen::Index i = 0; i < 5; ++i) brute += w(i) * A.row(i).transpose() * B.row(i);
  CHECK(max_abs(weighted_cross_moment(A, B, w) - brute) < 1e-15);
}

TEST_CASE("concat_rows stacks datasets") {
  const Dataset a = small_iv(3, 5), b = small_iv(2, 6);
  const Dataset c = concat_rows(a, b);
  CHECK(c.rows() == 5);
  CHECK(max_abs(c.col("y").bottomRows(2) - b.col("y")) == 0.0);
  Dataset w = a;
  w.weights = Vector::Ones(3);
  CHECK_THROWS(concat_rows(w, b));
}

TEST_CASE("file format round-trips bit-exactly with a JSON header line") {
  Dataset d = small_iv(7, 7);
  d.columns["x"](0, 0) = 1e-300;
  d.columns["x"](1, 1) = -0.1;
  const auto path = std::filesystem::temp_directory_path() / "speccausal_test_dataset.csv";
  save_dataset(d, path);
  std::ifstream is(path);
  std::string first, second;
  std::getline(is, first);
  std::getline(is, second);
  is.close();
  const auto header = nlohmann::json::parse(first);
  CHECK(header["setting"] == "iv");
  CHECK(header["rows"] == 7);
  CHECK(second.find("truth") != std::string::npos);

  const Dataset back = load_dataset(path);
  std::filesystem::remove(path);
  CHECK(back.setting == Setting::iv);
  for (const auto& [name, m] : d.columns) CHECK(max_abs(back.col(name) - m) == 0.0);
  CHECK(((*back.truth) - (*d.truth)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.metadata["generator"] == "test");
}

TEST_CASE("malformed dataset files are rejected") {
  const auto path = std::filesystem::temp_directory_path() / "speccausal_test_bad_dataset.csv";
  std::ofstream(path) << "not json\n";
  CHECK_THROWS_AS(load_dataset(path), Error);
  Dataset d = small_iv(2, 8);
  save_dataset(d, path);
  {
    std::ofstream os(path, std::ios::app);
    os << "";  // keep a valid file, then damage a value
  }
  std::string text;
  {
    std::ifstream is(path);
    text.assign(std::istreambuf_iterator<char>(is), {});
  }
  const auto pos = text.rfind(',');
  text.replace(pos + 1, 1, "x");
  std::ofstream(path) << text;
  CHECK_THROWS_AS(load_dataset(path), Error);
  std::filesystem::remove(path);
}
