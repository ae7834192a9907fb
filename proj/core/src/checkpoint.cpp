#include "iwprm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "iwprm/errors.hpp"
#include "iwprm/rng.hpp"

namespace iwprm {
namespace {

constexpr char kMagic[8] = {'I', 'W', 'P', 'R', 'M', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

// Explicit little-endian writer so the on-disk layout is host-independent.
class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) u64(static_cast<uint64_t>(d));
    for (double v : t.data) f64(v);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() {
    const char* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const char* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    const char* p = take(n);
    return std::string(p, n);
  }
  Tensor tensor() {
    const uint32_t rank = u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(u64());
    const auto n = static_cast<size_t>(shape_numel(shape));
    std::vector<double> data(n);
    for (auto& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  size_t pos() const { return pos_; }
  size_t size() const { return buf_.size(); }
  std::string_view prefix(size_t n) const { return std::string_view(buf_).substr(0, n); }

 private:
  const char* take(size_t n) {
    if (pos_ + n > buf_.size()) {
      throw ValidationError("checkpoint: truncated file");
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string buf_;
  size_t pos_ = 0;
};

void write_optimizer(Writer& w, const Optimizer& o) {
  w.u8(static_cast<uint8_t>(o.kind));
  w.u64(o.step_count);
  w.f64(o.lr);
  w.f64(o.weight_decay);
  w.f64(o.beta1);
  w.f64(o.beta2);
  w.f64(o.eps);
  w.u64(o.schedule.total_steps);
  w.f64(o.schedule.warmup_frac);
  w.u32(static_cast<uint32_t>(o.m.size()));
  for (size_t i = 0; i < o.m.size(); ++i) {
    w.tensor(o.m[i]);
    w.tensor(o.v[i]);
  }
}

Optimizer read_optimizer(Reader& r) {
  Optimizer o;
  o.kind = static_cast<OptKind>(r.u8());
  o.step_count = r.u64();
  o.lr = r.f64();
  o.weight_decay = r.f64();
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.schedule.total_steps = r.u64();
  o.schedule.warmup_frac = r.f64();
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    o.m.push_back(r.tensor());
    o.v.push_back(r.tensor());
  }
  return o;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.u32(kVersion);
  w.u64(ck.config_hash);
  w.u64(ck.seed);
  w.u64(ck.iteration);
  for (uint64_t s : ck.rng_state) w.u64(s);

  // scorer parameters
  w.u64(static_cast<uint64_t>(ck.phi.vocab_size));
  w.u64(static_cast<uint64_t>(ck.phi.width));
  const auto tensors = ck.phi.tensors();
  const auto& names = PrmParams::tensor_names();
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (size_t i = 0; i < tensors.size(); ++i) {
    w.str(names[i]);
    w.tensor(*tensors[i]);
  }

  write_optimizer(w, ck.lower);
  write_optimizer(w, ck.upper);

  w.u8(static_cast<uint8_t>(ck.strategy.kind));
  if (ck.strategy.kind == StrategyKind::kTable) {
    const auto& t = ck.strategy.table;
    w.f64(t.clip_lo);
    w.f64(t.clip_hi);
    w.f64(t.init_value);
    w.u64(t.size());
    for (size_t i = 0; i < t.size(); ++i) {
      w.str(t.ids[i]);
      w.f64(t.weights[i]);
    }
  } else if (ck.strategy.kind == StrategyKind::kNet) {
    const auto& n = ck.strategy.net;
    w.u64(static_cast<uint64_t>(n.input_width));
    w.u64(static_cast<uint64_t>(n.hidden));
    const auto nts = n.tensors();
    for (const Tensor* t : nts) w.tensor(*t);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  std::string all(kMagic, sizeof(kMagic));
  all += w.bytes();
  const uint64_t checksum = fnv1a64(all);
  Writer tail;
  tail.u64(checksum);
  out.write(tail.bytes().data(), static_cast<std::streamsize>(tail.bytes().size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint: bad magic in " + path.string());
  }
  {
    Reader tail(bytes.substr(bytes.size() - 8));
    const uint64_t want = tail.u64();
    const uint64_t got = fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8));
    if (want != got) {
      throw ValidationError("checkpoint: checksum mismatch in " + path.string());
    }
  }

  Reader r(bytes.substr(sizeof(kMagic), bytes.size() - sizeof(kMagic) - 8));
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.config_hash = r.u64();
  ck.seed = r.u64();
  ck.iteration = r.u64();
  for (auto& s : ck.rng_state) s = r.u64();

  ck.phi.vocab_size = static_cast<int64_t>(r.u64());
  ck.phi.width = static_cast<int64_t>(r.u64());
  const uint32_t n_tensors = r.u32();
  const auto tensors = ck.phi.tensors();
  const auto& names = PrmParams::tensor_names();
  if (n_tensors != tensors.size()) {
    throw ValidationError("checkpoint: unexpected scorer tensor count");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::string name = r.str();
    if (name != names[i]) {
      throw ValidationError("checkpoint: tensor '" + name + "' out of order");
    }
    *tensors[i] = r.tensor();
  }

  ck.lower = read_optimizer(r);
  ck.upper = read_optimizer(r);

  ck.strategy.kind = static_cast<StrategyKind>(r.u8());
  if (ck.strategy.kind == StrategyKind::kTable) {
    const double lo = r.f64();
    const double hi = r.f64();
    const double init = r.f64();
    const uint64_t n = r.u64();
    std::vector<std::string> ids;
    std::vector<double> weights;
    ids.reserve(n);
    weights.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
      ids.push_back(r.str());
      weights.push_back(r.f64());
    }
    ck.strategy.table = InstanceTable::create(ids, lo, hi, init);
    ck.strategy.table.weights = std::move(weights);
  } else if (ck.strategy.kind == StrategyKind::kNet) {
    ck.strategy.net.input_width = static_cast<int64_t>(r.u64());
    ck.strategy.net.hidden = static_cast<int64_t>(r.u64());
    const auto nts = ck.strategy.net.tensors();
    for (Tensor* t : nts) *t = r.tensor();
  }
  return ck;
}

}  // namespace iwprm
