#include "adabatch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adabatch/error.hpp"

namespace adabatch {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'A', 'B'};
constexpr const char* kVelocityPrefix = "velocity.";

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string text(std::uint64_t len, const char* what) {
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what +
                        " at byte offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, data.records.size());
  for (const auto& rec : data.records) {
    if (rec.values.size() != shape_volume(rec.shape)) {
      throw DimensionError("checkpoint record " + rec.name + " has inconsistent size");
    }
    put_le<std::uint64_t>(out, rec.name.size());
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    put_le<std::uint64_t>(out, rec.shape.size());
    for (std::size_t e : rec.shape) put_le<std::uint64_t>(out, e);
    for (double v : rec.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  put_le<std::uint64_t>(out, data.rng_state.size());
  out.insert(out.end(), data.rng_state.begin(), data.rng_state.end());
  put_le<std::uint64_t>(out, data.next_epoch);
  return out;
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  Reader in(bytes.subspan(4));
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData data;
  const auto count = in.get<std::uint64_t>("record count");
  for (std::uint64_t k = 0; k < count; ++k) {
    CheckpointRecord rec;
    rec.name = in.text(in.get<std::uint64_t>("name length"), "name");
    const auto rank = in.get<std::uint64_t>("rank");
    if (rank < 1 || rank > 4) throw FormatError("checkpoint record " + rec.name + ": bad rank");
    std::uint64_t volume = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const auto e = in.get<std::uint64_t>("extent");
      if (e == 0 || e > (std::uint64_t{1} << 40)) {
        throw FormatError("checkpoint record " + rec.name + ": bad extent");
      }
      rec.shape.push_back(e);
      volume *= e;
    }
    if (volume > (bytes.size() / 8)) throw FormatError("checkpoint truncated in " + rec.name);
    rec.values.resize(volume);
    for (auto& v : rec.values) v = std::bit_cast<double>(in.get<std::uint64_t>("values"));
    data.records.push_back(std::move(rec));
  }
  data.rng_state = in.text(in.get<std::uint64_t>("rng length"), "rng state");
  data.next_epoch = in.get<std::uint64_t>("next epoch");
  if (!in.done()) {
    throw FormatError("checkpoint has trailing bytes after offset " + std::to_string(in.pos() + 4));
  }
  return data;
}

template <class T>
CheckpointData capture(Network<T>& net, const SgdState<T>& opt, const Rng& rng,
                       std::uint64_t next_epoch) {
  CheckpointData data;
  for (const auto& t : net.state_tensors()) {
    const auto v = t.tensor->data();
    data.records.push_back({t.name, t.tensor->shape(), std::vector<double>(v.begin(), v.end())});
  }
  const auto params = net.params();
  const auto& vel = opt.velocity();
  if (!vel.empty() && vel.size() != params.size()) {
    throw StateError("optimizer velocity does not match the network parameters");
  }
  for (std::size_t k = 0; k < vel.size(); ++k) {
    const auto v = vel[k].data();
    data.records.push_back({kVelocityPrefix + params[k].name, vel[k].shape(),
                            std::vector<double>(v.begin(), v.end())});
  }
  data.rng_state = rng.serialize();
  data.next_epoch = next_epoch;
  return data;
}

template <class T>
std::uint64_t restore(const CheckpointData& data, Network<T>& net, SgdState<T>& opt, Rng& rng) {
  auto targets = net.state_tensors();
  const auto params = net.params();
  const std::size_t n_state = targets.size();
  const std::size_t n_vel = data.records.size() >= n_state ? data.records.size() - n_state : 0;
  if (data.records.size() < n_state || (n_vel != 0 && n_vel != params.size())) {
    throw FormatError("checkpoint holds " + std::to_string(data.records.size()) +
                      " records; network expects " + std::to_string(n_state) + " (+" +
                      std::to_string(params.size()) + " velocity)");
  }
  auto check = [](const CheckpointRecord& rec, const std::string& name, const Shape& shape) {
    if (rec.name != name) throw FormatError("checkpoint record " + rec.name + ", expected " + name);
    if (rec.shape != shape) {
      throw FormatError("checkpoint record " + name + " has shape " + shape_string(rec.shape) +
                        ", network expects " + shape_string(shape));
    }
  };
  for (std::size_t k = 0; k < n_state; ++k) check(data.records[k], targets[k].name, targets[k].tensor->shape());
  std::vector<BasicTensor<T>> velocity;
  for (std::size_t k = 0; k < n_vel; ++k) {
    const auto& rec = data.records[n_state + k];
    check(rec, kVelocityPrefix + params[k].name, params[k].tensor->shape());
    BasicTensor<T> v(rec.shape);
    auto dst = v.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
    velocity.push_back(std::move(v));
  }
  Rng restored;
  try {
    restored.deserialize(data.rng_state);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint rng state: ") + e.what());
  }

  for (std::size_t k = 0; k < n_state; ++k) {
    auto dst = targets[k].tensor->data();
    const auto& src = data.records[k].values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  opt.velocity() = std::move(velocity);
  rng = restored;
  return data.next_epoch;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net, const SgdState<T>& opt,
                     const Rng& rng, std::uint64_t next_epoch) {
  write_bytes(path, encode_checkpoint(capture(net, opt, rng, next_epoch)));
}

template <class T>
std::uint64_t load_checkpoint(const std::filesystem::path& path, Network<T>& net,
                              SgdState<T>& opt, Rng& rng) {
  const auto bytes = read_bytes(path);
  try {
    return restore(decode_checkpoint(bytes), net, opt, rng);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

#define ADABATCH_INSTANTIATE(T)                                                                 \
  template CheckpointData capture<T>(Network<T>&, const SgdState<T>&, const Rng&, std::uint64_t); \
  template std::uint64_t restore<T>(const CheckpointData&, Network<T>&, SgdState<T>&, Rng&);     \
  template void save_checkpoint<T>(const std::filesystem::path&, Network<T>&, const SgdState<T>&, \
                                   const Rng&, std::uint64_t);                                   \
  template std::uint64_t load_checkpoint<T>(const std::filesystem::path&, Network<T>&,           \
                                            SgdState<T>&, Rng&);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch
