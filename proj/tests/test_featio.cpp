#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "featprobe/errors.hpp"
#include "featprobe/feature_set.hpp"
#include "featprobe/manifest.hpp"
#include "featprobe/npy.hpp"
#include "featprobe/rng.hpp"

namespace fs = std::filesystem;
using namespace featprobe;

namespace {

// Fresh scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("featprobe_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), bytes.size());
}

// A syntactically valid v1.0 file built by hand, so the loader tests do not
// depend on our own writer.
std::string handmade_npy(const std::string& descr, const std::string& order,
                         const std::string& shape, const std::string& payload) {
  std::string header = "{'descr': " + descr + ", 'fortran_order': " + order +
                       ", 'shape': " + shape + ", }";
  size_t total = 10 + header.size() + 1;
  size_t pad = (64 - total % 64) % 64;
  header += std::string(pad, ' ') + "\n";
  std::string out = "\x93NUMPY";
  out.push_back('\x01');
  out.push_back('\x00');
  std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  return out + header + payload;
}

std::string doubles_payload(const std::vector<double>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()),
                     v.size() * sizeof(double));
}

}  // namespace

TEST_SUITE_BEGIN("featio");

TEST_CASE("f64 arrays round-trip bit for bit") {
  TempDir dir;
  Rng rng(42);
  std::vector<double> data(6 * 4);
  rng.fill_normal(data.data(), static_cast<std::int64_t>(data.size()));
  data[0] = 0.0;
  data[1] = -0.0;
  data[2] = 1e-308;

  auto path = dir.file("a.npy");
  npy::save(path, {6, 4}, data.data());
  auto back = npy::load(path);
  CHECK(back.shape == std::vector<std::int64_t>{6, 4});
  CHECK(back.stored == npy::Dtype::f64);
  REQUIRE(back.data.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    // Bitwise comparison; == would conflate 0.0 and -0.0.
    CHECK(std::memcmp(&back.data[i], &data[i], sizeof(double)) == 0);
  }
}

TEST_CASE("f32 arrays load widened to double") {
  TempDir dir;
  std::vector<double> data = {1.5, -2.25, 0.125, 3.0, -0.5, 10.0};
  auto path = dir.file("f32.npy");
  npy::save(path, {2, 3}, data.data(), npy::Dtype::f32);
  auto back = npy::load(path);
  CHECK(back.stored == npy::Dtype::f32);
  // These values are exactly representable in f32, so no rounding applies.
  CHECK(back.data == data);
}

TEST_CASE("rank-3 arrays keep their token axis") {
  TempDir dir;
  std::vector<double> data(2 * 3 * 4, 1.25);
  auto path = dir.file("tok.npy");
  npy::save(path, {2, 3, 4}, data.data());
  CHECK(npy::peek_shape(path) == std::vector<std::int64_t>{2, 3, 4});
  CHECK(npy::load(path).data == data);
}

TEST_CASE("save refuses to overwrite unless told to") {
  TempDir dir;
  std::vector<double> data(4, 1.0);
  auto path = dir.file("x.npy");
  npy::save(path, {2, 2}, data.data());
  CHECK_THROWS_AS(npy::save(path, {2, 2}, data.data()), IoError);
  data[0] = 7.0;
  npy::save(path, {2, 2}, data.data(), npy::Dtype::f64, true);
  CHECK(npy::load(path).data[0] == 7.0);
}

TEST_CASE("payload alignment puts data on a 64-byte boundary") {
  TempDir dir;
  std::vector<double> data(4, 0.5);
  auto path = dir.file("aligned.npy");
  npy::save(path, {2, 2}, data.data());
  std::ifstream f(path, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  CHECK((all.size() - 4 * sizeof(double)) % 64 == 0);
}

TEST_CASE("loader accepts a file written by hand") {
  TempDir dir;
  auto path = dir.file("hand.npy");
  write_bytes(path, handmade_npy("'<f8'", "False", "(2, 2)",
                                 doubles_payload({1, 2, 3, 4})));
  auto arr = npy::load(path);
  CHECK(arr.shape == std::vector<std::int64_t>{2, 2});
  CHECK(arr.data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("loader names the header field it rejects") {
  TempDir dir;
  auto p = [&](const std::string& name) { return dir.file(name); };
  auto payload4 = doubles_payload({1, 2, 3, 4});

  write_bytes(p("magic.npy"), "NOTNPY" + std::string(100, ' '));
  CHECK_THROWS_AS(npy::load(p("magic.npy")), FormatError);

  write_bytes(p("fortran.npy"), handmade_npy("'<f8'", "True", "(2, 2)", payload4));
  CHECK_THROWS_WITH_AS(npy::load(p("fortran.npy")),
                       doctest::Contains("fortran_order"), FormatError);

  write_bytes(p("dtype.npy"), handmade_npy("'>f8'", "False", "(2, 2)", payload4));
  CHECK_THROWS_WITH_AS(npy::load(p("dtype.npy")), doctest::Contains("descr"),
                       FormatError);

  write_bytes(p("int.npy"), handmade_npy("'<i8'", "False", "(2, 2)", payload4));
  CHECK_THROWS_AS(npy::load(p("int.npy")), FormatError);

  write_bytes(p("rank1.npy"), handmade_npy("'<f8'", "False", "(4,)", payload4));
  CHECK_THROWS_WITH_AS(npy::load(p("rank1.npy")), doctest::Contains("shape"),
                       FormatError);

  write_bytes(p("short.npy"),
              handmade_npy("'<f8'", "False", "(2, 2)", doubles_payload({1, 2})));
  CHECK_THROWS_WITH_AS(npy::load(p("short.npy")), doctest::Contains("shorter"),
                       FormatError);

  write_bytes(p("long.npy"),
              handmade_npy("'<f8'", "False", "(2, 2)",
                           doubles_payload({1, 2, 3, 4, 5})));
  CHECK_THROWS_WITH_AS(npy::load(p("long.npy")), doctest::Contains("trailing"),
                       FormatError);

  CHECK_THROWS_AS(npy::load(dir.file("missing.npy")), IoError);
}

TEST_CASE("non-finite payload values are a data error, not a format error") {
  TempDir dir;
  auto path = dir.file("nan.npy");
  double inf = std::numeric_limits<double>::infinity();
  write_bytes(path, handmade_npy("'<f8'", "False", "(2, 2)",
                                 doubles_payload({1, inf, 3, 4})));
  CHECK_THROWS_WITH_AS(npy::load(path), doctest::Contains("flat index 1"),
                       DataError);
}

TEST_CASE("feature set validation enforces the invariants") {
  FeatureSet ok{{3, 2}, {1, 2, 3, 4, 5, 6}, npy::Dtype::f64, "x", "x", "test"};
  validate_feature_set(ok, "test");

  FeatureSet one_sample{{1, 2}, {1, 2}, npy::Dtype::f64, "x", "x", "test"};
  CHECK_THROWS_WITH_AS(validate_feature_set(one_sample, "ctx"),
                       doctest::Contains("at least 2"), DataError);

  FeatureSet bad_len{{2, 2}, {1, 2, 3}, npy::Dtype::f64, "x", "x", "test"};
  CHECK_THROWS_AS(validate_feature_set(bad_len, "ctx"), DataError);

  FeatureSet rank1{{4}, {1, 2, 3, 4}, npy::Dtype::f64, "x", "x", "test"};
  CHECK_THROWS_AS(validate_feature_set(rank1, "ctx"), DataError);
}

TEST_CASE("mean_pool averages tokens and passes 2d through") {
  FeatureSet tok{{2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8},
                 npy::Dtype::f64, "encoder", "e", "test"};
  auto pooled = mean_pool(tok);
  CHECK(pooled.shape == std::vector<std::int64_t>{2, 2});
  CHECK(pooled.data == std::vector<double>{2, 3, 6, 7});

  FeatureSet flat2 = mean_pool(pooled);
  CHECK(flat2.shape == pooled.shape);
  CHECK(flat2.data == pooled.data);

  auto tokens_as_rows = flatten_tokens(tok);
  CHECK(tokens_as_rows.shape == std::vector<std::int64_t>{4, 2});
  CHECK(tokens_as_rows.data == tok.data);
}

TEST_CASE("feature files carry their source path") {
  TempDir dir;
  FeatureSet x{{2, 3}, {1, 2, 3, 4, 5, 6}, npy::Dtype::f64, "x", "x", ""};
  auto path = dir.file("feat.npy");
  save_feature_file(x, path);
  auto back = load_feature_file(path);
  CHECK(back.source == path);
  CHECK(back.shape == x.shape);
  CHECK(back.data == x.data);
}

TEST_CASE("manifest round-trips and resolves roles relative to its directory") {
  TempDir dir;
  std::vector<double> xs = {1, 2, 3, 4, 5, 6};
  std::vector<double> ys = {9, 8, 7, 6};
  npy::save(dir.file("x.npy"), {3, 2}, xs.data());
  npy::save(dir.file("y.npy"), {2, 2}, ys.data());

  Manifest m;
  m.experiment = "round-trip";
  m.seed = 77;
  m.entries = {{"x", "x.npy", {3, 2}}, {"y", "y.npy", {2, 2}}};
  save_manifest(m, dir.file("manifest.json"));

  auto back = load_manifest(dir.file("manifest.json"));
  CHECK(back.experiment == "round-trip");
  CHECK(back.seed == 77);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.find("x") != nullptr);
  CHECK(back.find("nope") == nullptr);

  auto x = load_role(back, "x");
  CHECK(x.role == "x");
  CHECK(x.data == xs);

  CHECK_THROWS_WITH_AS(load_role(back, "expert"), doctest::Contains("available"),
                       ConfigError);
}

TEST_CASE("manifest loading cross-checks shapes against the files") {
  TempDir dir;
  std::vector<double> xs = {1, 2, 3, 4, 5, 6};
  npy::save(dir.file("x.npy"), {3, 2}, xs.data());

  nlohmann::json j = {
      {"experiment", "mismatch"},
      {"seed", 1},
      {"entries",
       {{{"role", "x"}, {"path", "x.npy"}, {"shape", {2, 3}}}}}};
  write_bytes(dir.file("manifest.json"), j.dump());
  CHECK_THROWS_WITH_AS(load_manifest(dir.file("manifest.json")),
                       doctest::Contains("declares shape"), DataError);

  nlohmann::json missing = {
      {"experiment", "gone"},
      {"seed", 1},
      {"entries",
       {{{"role", "x"}, {"path", "gone.npy"}, {"shape", {3, 2}}}}}};
  write_bytes(dir.file("m2.json"), missing.dump());
  CHECK_THROWS_AS(load_manifest(dir.file("m2.json")), DataError);

  write_bytes(dir.file("m3.json"), "{not json");
  CHECK_THROWS_AS(load_manifest(dir.file("m3.json")), FormatError);
}

TEST_SUITE_END();
