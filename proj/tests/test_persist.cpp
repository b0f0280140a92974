// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "shira/error.hpp"
#include "shira/persist.hpp"
#include "shira/runtime.hpp"

using namespace shira;

namespace {

SparseAdapter random_sparse(Rng& rng, std::uint32_t rows, std::uint32_t cols,
                            double density) {
  SparseAdapter s;
  s.rows = rows;
  s.cols = cols;
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j)
      if (rng.uniform() < density) {
        s.coords.push_back({i, j});
        s.values.push_back(rng.gaussian());
      }
  s.alpha_default = 0.5 + rng.uniform();
  s.strategy = static_cast<MaskStrategy>(rng.below(5));
  return s;
}

SparseModelAdapter random_model_adapter(Rng& rng) {
  SparseModelAdapter out;
  const std::size_t layers = 1 + rng.below(3);
  std::uint32_t id = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    id += static_cast<std::uint32_t>(rng.below(3));
    SparseAdapter s = random_sparse(rng, 1 + static_cast<std::uint32_t>(rng.below(60)),
                                    1 + static_cast<std::uint32_t>(rng.below(60)),
                                    0.2 * rng.uniform());
    s.source_layer = id;
    out.layers.emplace(id, std::move(s));
    ++id;
  }
  out.meta = {{"strategy", "rand"}, {"seed", rng.below(1000)}};
  return out;
}

// Hand-built little-endian encoding.
struct ByteBuilder {
  Bytes out;
  ByteBuilder& raw(std::initializer_list<std::uint8_t> b) {
    out.insert(out.end(), b);
    return *this;
  }
  ByteBuilder& str(const char* s) {
    out.insert(out.end(), s, s + std::strlen(s));
    return *this;
  }
  ByteBuilder& u32(std::uint32_t v) {
    return raw({static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)});
  }
  ByteBuilder& u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    return u32(static_cast<std::uint32_t>(v >> 32));
  }
  ByteBuilder& f64(double v) {
    std::uint64_t u = 0;
    std::memcpy(&u, &v, 8);
    return u64(u);
  }
};

FormatErrorKind decode_kind(const Bytes& bytes) {
  try {
    decode_adapter(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode accepted corrupted bytes");
  return FormatErrorKind::bad_magic;
}

SparseModelAdapter tiny() {
  SparseAdapter s;
  s.rows = 2;
  s.cols = 3;
  s.coords = {{0, 1}, {1, 2}};
  s.values = {1.5, -2.0};
  s.strategy = MaskStrategy::random;
  SparseModelAdapter a;
  a.layers.emplace(0, s);
  a.meta = {{"k", 1}};
  return a;
}

}  // namespace

TEST_CASE("byte-exact sparse encoding") {
  ByteBuilder b;
  b.str("SHRA").u32(1).raw({0}).u32(1);
  b.u32(0).u32(2).u32(3).u64(2).f64(1.0).raw({1});
  b.u32(0).u32(1).u32(1).u32(2);
  b.f64(1.5).f64(-2.0);
  b.u32(7).str("{\"k\":1}");
  const Bytes enc = encode_adapter(tiny());
  CHECK(enc == b.out);
  CHECK(enc.size() == kAdapterHeaderBytes + kLayerHeaderBytes + sparse_payload_bytes(2) + 4 + 7);
  // Spot-check literal bytes: magic, version, then 1.5 as IEEE-754 LE.
  CHECK(enc[0] == 0x53);
  CHECK(enc[3] == 0x41);
  CHECK(enc[4] == 0x01);
  const std::size_t first_value = 13 + 12 + 17 + 16;
  const std::uint8_t one_and_half[8] = {0, 0, 0, 0, 0, 0, 0xF8, 0x3F};
  CHECK(std::memcmp(enc.data() + first_value, one_and_half, 8) == 0);
  CHECK(fnv1a64(enc) == fnv1a64(b.out));
  CHECK(std::get<SparseModelAdapter>(decode_adapter(b.out)).layers.at(0).values ==
        std::vector<double>{1.5, -2.0});
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
  const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(fnv1a64(foobar) == 0x85944171f73967e8ULL);
}

TEST_CASE("sparse roundtrip over random adapters") {
  Rng rng(100);
  for (int i = 0; i < 200; ++i) {
    const SparseModelAdapter a = random_model_adapter(rng);
    const Bytes enc = encode_adapter(a);
    std::size_t expected = kAdapterHeaderBytes + 4 + a.meta.dump().size();
    for (const auto& [id, layer] : a.layers)
      expected += kLayerHeaderBytes + sparse_payload_bytes(layer.nnz());
    CHECK(enc.size() == expected);
    const ModelAdapter back = decode_adapter(enc);
    REQUIRE(std::holds_alternative<SparseModelAdapter>(back));
    CHECK(std::get<SparseModelAdapter>(back) == a);
    CHECK(encode_adapter(back) == enc);
  }
}

TEST_CASE("lora roundtrip") {
  Rng rng(101);
  LoraModelAdapter l;
  l.layers.emplace(1, LoraAdapter{rand_matrix(rng, 5, 3, Distribution::gaussian(1.0)),
                                  rand_matrix(rng, 3, 4, Distribution::gaussian(1.0)), 2.0});
  l.layers.emplace(3, LoraAdapter{rand_matrix(rng, 2, 1, Distribution::gaussian(1.0)),
                                  rand_matrix(rng, 1, 6, Distribution::gaussian(1.0)), 0.5});
  const Bytes enc = encode_adapter(l);
  CHECK(enc.size() == kAdapterHeaderBytes + 2 * (kLayerHeaderBytes + 4 + 8) +
                          8 * (15 + 12 + 2 + 6) + 4 + 2);
  CHECK(std::get<LoraModelAdapter>(decode_adapter(enc)) == l);
}

TEST_CASE("empty support encodes and decodes") {
  SparseModelAdapter a = tiny();
  a.layers.at(0).coords.clear();
  a.layers.at(0).values.clear();
  const Bytes enc = encode_adapter(a);
  const auto back = std::get<SparseModelAdapter>(decode_adapter(enc));
  CHECK(back.layers.at(0).nnz() == 0);
  CHECK(back == a);
}

TEST_CASE("meta is optional on read") {
  Bytes enc = encode_adapter(tiny());
  enc.resize(enc.size() - 4 - 7);
  const auto back = std::get<SparseModelAdapter>(decode_adapter(enc));
  CHECK(back.meta == nlohmann::json::object());
  CHECK(back.layers == tiny().layers);
}

TEST_CASE("each corruption maps to its error kind") {
  const Bytes good = encode_adapter(tiny());
  const std::size_t layer = 13;
  const std::size_t nnz_at = layer + 12;
  const std::size_t coords_at = layer + 12 + 17;

  Bytes b = good;
  b[0] = 'X';
  CHECK(decode_kind(b) == FormatErrorKind::bad_magic);

  b = good;
  b[4] = 2;
  CHECK(decode_kind(b) == FormatErrorKind::unsupported_version);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, layer + 5, coords_at + 3,
                          good.size() - 9}) {
    b.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CAPTURE(cut);
    CHECK(decode_kind(b) == FormatErrorKind::truncated);
  }

  // nnz claims more entries than are present.
  b = good;
  b[nnz_at] = 3;
  CHECK(decode_kind(b) == FormatErrorKind::truncated);

  // nnz beyond rows * cols.
  b = good;
  b[nnz_at] = 7;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);

  // Swap the two coords.
  b = good;
  std::swap_ranges(b.begin() + static_cast<std::ptrdiff_t>(coords_at),
                   b.begin() + static_cast<std::ptrdiff_t>(coords_at + 8),
                   b.begin() + static_cast<std::ptrdiff_t>(coords_at + 8));
  CHECK(decode_kind(b) == FormatErrorKind::unsorted_coords);

  // Duplicate coordinate.
  b = good;
  std::copy(b.begin() + static_cast<std::ptrdiff_t>(coords_at),
            b.begin() + static_cast<std::ptrdiff_t>(coords_at + 8),
            b.begin() + static_cast<std::ptrdiff_t>(coords_at + 8));
  CHECK(decode_kind(b) == FormatErrorKind::unsorted_coords);

  b = good;
  b[coords_at + 4] = 3;
  CHECK(decode_kind(b) == FormatErrorKind::out_of_bounds);

  b = good;
  b.push_back(0);
  CHECK(decode_kind(b) == FormatErrorKind::trailing_bytes);

  b = good;
  b[8] = 9;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);

  b = good;
  b[layer + 4] = 0;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);

  b = good;
  b[nnz_at + 16] = 200;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);

  // A NaN value.
  b = good;
  const std::size_t v0 = coords_at + 16;
  for (std::size_t i = 0; i < 8; ++i) b[v0 + i] = 0xFF;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);

  // Meta that is not an object.
  b = good;
  b[b.size() - 7] = '[';
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);
}

TEST_CASE("layer ids must increase") {
  SparseModelAdapter a = tiny();
  SparseAdapter second = a.layers.at(0);
  a.layers.emplace(4, second);
  Bytes b = encode_adapter(a);
  const std::size_t second_id = 13 + 12 + sparse_payload_bytes(2);
  b[second_id] = 0;
  CHECK(decode_kind(b) == FormatErrorKind::invalid_field);
}

TEST_CASE("huge declared nnz fails before allocating") {
  Bytes b = encode_adapter(tiny());
  SparseModelAdapter a = tiny();
  a.layers.at(0).rows = 0xFFFFFFFF;
  a.layers.at(0).cols = 0xFFFFFFFF;
  b = encode_adapter(a);
  const std::size_t nnz_at = 13 + 12;
  for (std::size_t i = 0; i < 8; ++i) b[nnz_at + i] = i < 7 ? 0xFF : 0x0F;
  CHECK(decode_kind(b) == FormatErrorKind::truncated);
}

TEST_CASE("random byte flips never yield an invalid adapter") {
  Rng rng(102);
  std::size_t rejected = 0;
  std::size_t total = 0;
  for (int i = 0; i < 100; ++i) {
    const Bytes good = encode_adapter(random_model_adapter(rng));
    for (int f = 0; f < 20; ++f) {
      Bytes b = good;
      const std::size_t flips = 1 + rng.below(4);
      for (std::size_t k = 0; k < flips; ++k)
        b[rng.below(b.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
      ++total;
      try {
        const ModelAdapter back = decode_adapter(b);
        for (const auto& [id, layer] : std::get<SparseModelAdapter>(back).layers)
          CHECK_NOTHROW(layer.validate());
      } catch (const FormatError&) {
        ++rejected;
      }
    }
  }
  MESSAGE("rejected " << rejected << " of " << total);
  CHECK(rejected > 0);
}

TEST_CASE("checkpoint roundtrip and errors") {
  Rng rng(103);
  const std::vector<std::size_t> widths{7, 5, 3};
  const Mlp m = Mlp::random(4, widths, Activation::tanh, Activation::none, rng);
  const Bytes enc = encode_checkpoint(m);
  CHECK(enc.size() == 4 + 4 + 4 + 4 + 3 * 9 + 8 * (7 * 5 + 5 * 8 + 3 * 6));
  CHECK(decode_checkpoint(enc) == m);

  Bytes b = enc;
  b[0] = 'Q';
  CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  b = enc;
  b.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  b = enc;
  b[16 + 9 + 4] = 9;  // second layer input no longer chains
  CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  CHECK_THROWS_AS(decode_adapter(enc), FormatError);
}

TEST_CASE("mask roundtrip") {
  Rng rng(104);
  ModelMask mm;
  mm.layers.emplace(0, make_random_mask({10, 12}, MaskBudget(0.1), rng));
  mm.layers.emplace(2, make_random_mask({6, 4}, MaskBudget(0.5), rng));
  const Bytes enc = encode_mask(mm);
  CHECK(decode_mask(enc) == mm);
  Bytes b = enc;
  b.push_back(1);
  CHECK_THROWS_AS(decode_mask(b), FormatError);
}

TEST_CASE("files and architecture mismatch") {
  const auto dir = std::filesystem::temp_directory_path() / "shira_persist_test";
  std::filesystem::create_directories(dir);
  Rng rng(105);
  const std::vector<std::size_t> widths{6, 3};
  const Mlp m = Mlp::random(4, widths, Activation::relu, Activation::none, rng);
  write_checkpoint(dir / "m.bin", m);
  CHECK(read_checkpoint(dir / "m.bin") == m);

  SparseModelAdapter a;
  a.layers.emplace(0, random_sparse(rng, 6, 4, 0.2));
  write_adapter(dir / "a.bin", a);
  CHECK(std::get<SparseModelAdapter>(read_adapter(dir / "a.bin")) == a);

  SparseModelAdapter wrong;
  wrong.layers.emplace(0, random_sparse(rng, 6, 5, 0.2));
  write_adapter(dir / "w.bin", wrong);
  AdapterRuntime rt(m);
  CHECK_THROWS_AS(rt.load(read_adapter(dir / "w.bin"), 1.0), ShapeError);
  CHECK(rt.write_count() == 0);

  CHECK_THROWS_AS(read_adapter(dir / "missing.bin"), IoError);
  CHECK_THROWS_AS(write_file(dir / "no" / "such" / "dir.bin", Bytes{1}), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("encoder rejects invalid adapters") {
  SparseModelAdapter a = tiny();
  a.layers.at(0).values.pop_back();
  CHECK_THROWS(encode_adapter(a));
}
