#include "protofed/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace protofed {

namespace {

constexpr char kModelMagic[4] = {'P', 'F', 'L', 'M'};
constexpr char kProtoMagic[4] = {'P', 'F', 'L', 'P'};

class Writer {
 public:
  void magic(const char (&m)[4]) { out_.append(m, 4); }
  void u32(std::uint32_t v) { uint_le(v, 4); }
  void u64(std::uint64_t v) { uint_le(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  void uint_le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  bool magic(const char (&m)[4]) {
    need(4);
    const bool ok = bytes_.compare(pos_, 4, m, 4) == 0;
    pos_ += 4;
    return ok;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IngestionError("checkpoint: truncated data");
  }
  std::uint64_t uint_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    }
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  check_shapes(ckpt.params);
  Writer w;
  w.magic(kModelMagic);
  w.u32(kCheckpointVersion);
  std::vector<const DenseLayer*> layers;
  for (const auto& l : ckpt.params.extractor) layers.push_back(&l);
  layers.push_back(&ckpt.params.classifier);
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto* l : layers) {
    w.u32(static_cast<std::uint32_t>(l->weights.rows()));
    w.u32(static_cast<std::uint32_t>(l->weights.cols()));
  }
  for (double v : flatten(ckpt.params)) w.f64(v);

  if (ckpt.prototypes) {
    const auto& set = *ckpt.prototypes;
    w.magic(kProtoMagic);
    w.u32(static_cast<std::uint32_t>(set.size()));
    w.u32(static_cast<std::uint32_t>(set.dim()));
    for (const auto& [k, entry] : set) {
      w.i32(k);
      w.u64(entry.support);
      for (Eigen::Index i = 0; i < entry.vector.size(); ++i) w.f64(entry.vector(i));
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (!r.magic(kModelMagic)) throw IngestionError("checkpoint: bad magic (expected PFLM)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IngestionError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto n_layers = r.u32();
  if (n_layers < 2) throw IngestionError("checkpoint: needs at least two layers");
  if (n_layers > 4096) throw IngestionError("checkpoint: implausible layer count");
  Checkpoint ckpt;
  std::vector<DenseLayer> layers(n_layers);
  for (auto& l : layers) {
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows == 0 || cols == 0 || rows > (1U << 20) || cols > (1U << 20)) {
      throw IngestionError("checkpoint: invalid layer shape");
    }
    l.weights.resize(rows, cols);
    l.bias.resize(rows);
  }
  ckpt.params.classifier = std::move(layers.back());
  layers.pop_back();
  ckpt.params.extractor = std::move(layers);
  try {
    check_shapes(ckpt.params);
  } catch (const UsageError& e) {
    throw IngestionError(std::string("checkpoint: ") + e.what());
  }
  std::vector<double> values(ckpt.params.param_count());
  for (auto& v : values) v = r.f64();
  ckpt.params = unflatten(values, ckpt.params);

  if (!r.at_end()) {
    if (!r.magic(kProtoMagic)) throw IngestionError("checkpoint: unknown trailing section");
    const auto count = r.u32();
    const auto dim = r.u32();
    PrototypeSet set;
    for (std::uint32_t c = 0; c < count; ++c) {
      const auto label = r.i32();
      const auto support = r.u64();
      Vec v(dim);
      for (std::uint32_t i = 0; i < dim; ++i) v(i) = r.f64();
      try {
        set.set(label, std::move(v), support);
      } catch (const UsageError& e) {
        throw IngestionError(std::string("checkpoint: ") + e.what());
      }
    }
    ckpt.prototypes = std::move(set);
    if (!r.at_end()) throw IngestionError("checkpoint: trailing bytes");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IngestionError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace protofed
