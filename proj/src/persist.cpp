// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/persist.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>

#include "shira/error.hpp"

namespace shira {
namespace {

constexpr char kAdapterMagic[4] = {'S', 'H', 'R', 'A'};
constexpr char kCheckpointMagic[4] = {'S', 'H', 'M', 'C'};
constexpr char kMaskMagic[4] = {'S', 'H', 'M', 'K'};

class Writer {
 public:
  void magic(const char (&m)[4]) { out_.insert(out_.end(), m, m + 4); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void meta(const nlohmann::json& meta) {
    const std::string text = meta.dump();
    u32(static_cast<std::uint32_t>(text.size()));
    out_.insert(out_.end(), text.begin(), text.end());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const noexcept { return in_.size() - pos_; }
  bool done() const noexcept { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatErrorKind::truncated,
                        std::string(what) + " needs " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_) +
                            ", " + std::to_string(remaining()) + " left");
    }
  }
  void magic(const char (&m)[4], const char* what) {
    need(4, "magic");
    if (std::memcmp(in_.data() + pos_, m, 4) != 0) {
      throw FormatError(FormatErrorKind::bad_magic,
                        std::string("not a ") + what + " file");
    }
    pos_ += 4;
  }
  void version() {
    const std::uint32_t v = u32("format version");
    if (v != kFormatVersion) {
      throw FormatError(FormatErrorKind::unsupported_version,
                        "version " + std::to_string(v) + ", expected " +
                            std::to_string(kFormatVersion));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) {
    const double v = std::bit_cast<double>(u64(what));
    if (!std::isfinite(v)) {
      throw FormatError(FormatErrorKind::invalid_field,
                        std::string(what) + " is not finite");
    }
    return v;
  }
  void f64s(std::span<double> out, const char* what) {
    for (double& v : out) v = f64(what);
  }
  /// Optional trailing JSON; absent meta reads as an empty object.
  nlohmann::json meta() {
    if (done()) return nlohmann::json::object();
    const std::uint32_t len = u32("meta length");
    need(len, "meta");
    const auto* first = reinterpret_cast<const char*>(in_.data() + pos_);
    nlohmann::json parsed =
        nlohmann::json::parse(first, first + len, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "meta is not a JSON object");
    }
    pos_ += len;
    return parsed;
  }
  void finish() const {
    if (!done()) {
      throw FormatError(FormatErrorKind::trailing_bytes,
                        std::to_string(remaining()) + " bytes after payload");
    }
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void require_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) {
    throw InvalidArgument(std::string(what) + " does not fit in u32");
  }
}

std::uint32_t positive_dim(Reader& r, const char* what) {
  const std::uint32_t v = r.u32(what);
  if (v == 0) {
    throw FormatError(FormatErrorKind::invalid_field,
                      std::string(what) + " is zero");
  }
  return v;
}

/// Reads nnz coords checking bounds and strict row-major order.
std::vector<Coord> read_coords(Reader& r, std::uint64_t nnz,
                               std::uint32_t rows, std::uint32_t cols) {
  std::vector<Coord> coords(nnz);
  for (std::uint64_t i = 0; i < nnz; ++i) {
    Coord c{r.u32("coord row"), 0};
    c.col = r.u32("coord col");
    if (c.row >= rows || c.col >= cols) {
      throw FormatError(FormatErrorKind::out_of_bounds,
                        "coord " + std::to_string(i) + " (" +
                            std::to_string(c.row) + "," +
                            std::to_string(c.col) + ") outside " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (i > 0 && !(coords[i - 1] < c)) {
      throw FormatError(FormatErrorKind::unsorted_coords,
                        "coord " + std::to_string(i) +
                            " does not follow its predecessor");
    }
    coords[i] = c;
  }
  return coords;
}

std::uint32_t read_layer_id(Reader& r, std::optional<std::uint32_t> prev) {
  const std::uint32_t id = r.u32("layer id");
  if (prev && id <= *prev) {
    throw FormatError(FormatErrorKind::invalid_field,
                      "layer ids not strictly increasing at " +
                          std::to_string(id));
  }
  return id;
}

void encode_sparse(Writer& w, const SparseModelAdapter& adapter) {
  w.u8(static_cast<std::uint8_t>(AdapterKind::sparse));
  w.u32(static_cast<std::uint32_t>(adapter.layers.size()));
  for (const auto& [id, layer] : adapter.layers) {
    layer.validate();
    w.u32(id);
    w.u32(layer.rows);
    w.u32(layer.cols);
    w.u64(layer.nnz());
    w.f64(layer.alpha_default);
    w.u8(static_cast<std::uint8_t>(layer.strategy));
    for (const Coord& c : layer.coords) {
      w.u32(c.row);
      w.u32(c.col);
    }
    w.f64s(layer.values);
  }
  w.meta(adapter.meta);
}

void encode_lora(Writer& w, const LoraModelAdapter& adapter) {
  w.u8(static_cast<std::uint8_t>(AdapterKind::lora));
  w.u32(static_cast<std::uint32_t>(adapter.layers.size()));
  for (const auto& [id, layer] : adapter.layers) {
    layer.validate();
    const Shape s = layer.shape();
    require_u32(s.rows, "lora rows");
    require_u32(s.cols, "lora cols");
    require_u32(layer.rank(), "lora rank");
    w.u32(id);
    w.u32(static_cast<std::uint32_t>(s.rows));
    w.u32(static_cast<std::uint32_t>(s.cols));
    w.u32(static_cast<std::uint32_t>(layer.rank()));
    w.f64(layer.alpha_lora);
    w.f64s(layer.a.data());
    w.f64s(layer.b.data());
  }
  w.meta(adapter.meta);
}

SparseModelAdapter decode_sparse(Reader& r, std::uint32_t layer_count) {
  SparseModelAdapter out;
  std::optional<std::uint32_t> prev;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t id = read_layer_id(r, prev);
    prev = id;
    SparseAdapter layer;
    layer.source_layer = id;
    layer.rows = positive_dim(r, "rows");
    layer.cols = positive_dim(r, "cols");
    const std::uint64_t nnz = r.u64("nnz");
    if (nnz > std::uint64_t{layer.rows} * layer.cols) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "nnz " + std::to_string(nnz) + " exceeds layer size");
    }
    // Declared nnz must be backed by payload before anything is allocated.
    r.need(sparse_payload_bytes(nnz) - 8, "sparse payload");
    layer.alpha_default = r.f64("alpha");
    const std::uint8_t strategy = r.u8("strategy");
    if (!is_known_strategy(strategy)) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "unknown mask strategy " + std::to_string(strategy));
    }
    layer.strategy = static_cast<MaskStrategy>(strategy);
    layer.coords = read_coords(r, nnz, layer.rows, layer.cols);
    layer.values.resize(nnz);
    r.f64s(layer.values, "value");
    out.layers.emplace(id, std::move(layer));
  }
  out.meta = r.meta();
  return out;
}

LoraModelAdapter decode_lora(Reader& r, std::uint32_t layer_count) {
  LoraModelAdapter out;
  std::optional<std::uint32_t> prev;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t id = read_layer_id(r, prev);
    prev = id;
    const std::uint32_t rows = positive_dim(r, "rows");
    const std::uint32_t cols = positive_dim(r, "cols");
    const std::uint32_t rank = positive_dim(r, "rank");
    const std::uint64_t count =
        std::uint64_t{rank} * (std::uint64_t{rows} + cols);
    if (count > r.remaining() / 8) {
      throw FormatError(FormatErrorKind::truncated,
                        "lora factors need " + std::to_string(count) +
                            " values");
    }
    LoraAdapter layer;
    layer.alpha_lora = r.f64("alpha");
    layer.a = DenseMatrix(rows, rank);
    layer.b = DenseMatrix(rank, cols);
    r.f64s(layer.a.data(), "lora a");
    r.f64s(layer.b.data(), "lora b");
    out.layers.emplace(id, std::move(layer));
  }
  out.meta = r.meta();
  return out;
}

}  // namespace

Bytes encode_adapter(const ModelAdapter& adapter) {
  Writer w;
  w.magic(kAdapterMagic);
  w.u32(kFormatVersion);
  if (const auto* s = std::get_if<SparseModelAdapter>(&adapter))
    encode_sparse(w, *s);
  else
    encode_lora(w, std::get<LoraModelAdapter>(adapter));
  return w.take();
}

ModelAdapter decode_adapter(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kAdapterMagic, "adapter");
  r.version();
  const std::uint8_t kind = r.u8("kind");
  const std::uint32_t layer_count = r.u32("layer count");
  ModelAdapter out;
  if (kind == static_cast<std::uint8_t>(AdapterKind::sparse)) {
    out = decode_sparse(r, layer_count);
  } else if (kind == static_cast<std::uint8_t>(AdapterKind::lora)) {
    out = decode_lora(r, layer_count);
  } else {
    throw FormatError(FormatErrorKind::invalid_field,
                      "unknown adapter kind " + std::to_string(kind));
  }
  r.finish();
  return out;
}

Bytes encode_checkpoint(const Mlp& model) {
  model.validate();
  Writer w;
  w.magic(kCheckpointMagic);
  w.u32(kFormatVersion);
  require_u32(model.input_dim(), "input dim");
  w.u32(static_cast<std::uint32_t>(model.input_dim()));
  w.u32(static_cast<std::uint32_t>(model.layer_count()));
  for (const LinearLayer& layer : model.layers()) {
    require_u32(layer.out_dim(), "layer width");
    w.u32(static_cast<std::uint32_t>(layer.out_dim()));
    w.u32(static_cast<std::uint32_t>(layer.in_dim()));
    w.u8(static_cast<std::uint8_t>(layer.activation));
  }
  for (const LinearLayer& layer : model.layers()) {
    w.f64s(layer.weight.data());
    w.f64s(layer.bias);
  }
  return w.take();
}

Mlp decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kCheckpointMagic, "checkpoint");
  r.version();
  const std::uint32_t input_dim = positive_dim(r, "input dim");
  const std::uint32_t layer_count = positive_dim(r, "layer count");
  if (layer_count > r.remaining() / 9) {
    throw FormatError(FormatErrorKind::truncated, "layer descriptors");
  }
  std::vector<LinearLayer> layers(layer_count);
  std::uint64_t expect_in = input_dim;
  std::uint64_t values = 0;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::uint32_t out_dim = positive_dim(r, "layer out");
    const std::uint32_t in_dim = positive_dim(r, "layer in");
    const std::uint8_t act = r.u8("activation");
    if (in_dim != expect_in) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "layer " + std::to_string(i) + " input " +
                            std::to_string(in_dim) + " does not chain from " +
                            std::to_string(expect_in));
    }
    if (act > static_cast<std::uint8_t>(Activation::tanh)) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "unknown activation " + std::to_string(act));
    }
    expect_in = out_dim;
    values += std::uint64_t{out_dim} * (std::uint64_t{in_dim} + 1);
    layers[i].activation = static_cast<Activation>(act);
    layers[i].weight = DenseMatrix(out_dim, in_dim);
  }
  if (values > r.remaining() / 8) {
    throw FormatError(FormatErrorKind::truncated,
                      "parameters need " + std::to_string(values) + " values");
  }
  for (LinearLayer& layer : layers) {
    r.f64s(layer.weight.data(), "weight");
    layer.bias.resize(layer.out_dim());
    r.f64s(layer.bias, "bias");
  }
  r.finish();
  return Mlp(input_dim, std::move(layers));
}

Bytes encode_mask(const ModelMask& mask) {
  Writer w;
  w.magic(kMaskMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(mask.layers.size()));
  for (const auto& [id, m] : mask.layers) {
    require_u32(id, "layer id");
    require_u32(m.rows(), "mask rows");
    require_u32(m.cols(), "mask cols");
    w.u32(static_cast<std::uint32_t>(id));
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    w.u64(m.size());
    for (const Coord& c : m.coords()) {
      w.u32(c.row);
      w.u32(c.col);
    }
  }
  return w.take();
}

ModelMask decode_mask(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kMaskMagic, "mask");
  r.version();
  const std::uint32_t layer_count = r.u32("layer count");
  ModelMask out;
  std::optional<std::uint32_t> prev;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t id = read_layer_id(r, prev);
    prev = id;
    const std::uint32_t rows = positive_dim(r, "rows");
    const std::uint32_t cols = positive_dim(r, "cols");
    const std::uint64_t nnz = r.u64("nnz");
    if (nnz > std::uint64_t{rows} * cols) {
      throw FormatError(FormatErrorKind::invalid_field,
                        "nnz exceeds layer size");
    }
    r.need(8 * nnz, "mask coords");
    out.layers.emplace(id, Mask(rows, cols, read_coords(r, nnz, rows, cols)));
  }
  r.finish();
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  Bytes bytes((std::istreambuf_iterator<char>(in)),
              std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_adapter(const std::filesystem::path& path,
                   const ModelAdapter& adapter) {
  write_file(path, encode_adapter(adapter));
}

ModelAdapter read_adapter(const std::filesystem::path& path) {
  return decode_adapter(read_file(path));
}

void write_checkpoint(const std::filesystem::path& path, const Mlp& model) {
  write_file(path, encode_checkpoint(model));
}

Mlp read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void write_mask(const std::filesystem::path& path, const ModelMask& mask) {
  write_file(path, encode_mask(mask));
}

ModelMask read_mask(const std::filesystem::path& path) {
  return decode_mask(read_file(path));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace shira
