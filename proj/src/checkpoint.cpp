#include "barnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace barnet {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  put<std::uint64_t>(out, ckpt.config_hash);
  for (const auto& r : ckpt.records) {
    Index n = 1;
    for (Index e : r.shape) n *= e;
    if (static_cast<std::size_t>(n) != r.values.size())
      throw DimensionError("checkpoint record " + r.name + ": shape " + to_string(r.shape) + " does not match " +
                           std::to_string(r.values.size()) + " values");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (Index e : r.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (bytes.size() < magic_len || bytes.compare(0, magic_len, kCheckpointMagic) != 0)
    throw ParseError("not a checkpoint (bad magic)", 0);
  in.take(magic_len, "magic");
  Checkpoint ckpt;
  ckpt.config_hash = in.get<std::uint64_t>("config hash");
  while (!in.done()) {
    TensorRecord r;
    const auto name_len = in.get<std::uint32_t>("name length");
    r.name = in.take(name_len, "name");
    const std::size_t rank_at = in.offset();
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ParseError("implausible rank " + std::to_string(rank) + " for " + r.name, rank_at);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::size_t at = in.offset();
      const auto e = in.get<std::uint64_t>("extent");
      if (e == 0 || e > (std::uint64_t{1} << 32)) throw ParseError("implausible extent for " + r.name, at);
      r.shape.push_back(static_cast<Index>(e));
      count *= e;
    }
    if (count * sizeof(float) > bytes.size()) throw ParseError("record " + r.name + " larger than file", in.offset());
    r.values.resize(count);
    in.read_floats(r.values.data(), count, "values");
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint capture(const BarnetMini<float>& model, std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  auto add = [&ckpt](const std::string& name, const Dense<float>& d) {
    ckpt.records.push_back({name, d.shape, std::vector<float>(d.data.data(), d.data.data() + d.numel())});
  };
  for (const auto& [name, t] : model.named_parameters()) add(name, t.value());
  for (const auto& [name, d] : const_cast<BarnetMini<float>&>(model).named_buffers()) add(name, *d);
  return ckpt;
}

void restore(BarnetMini<float>& model, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, Dense<float>*>> slots;
  for (auto& [name, t] : model.named_parameters()) slots.emplace_back(name, &t.mutable_value());
  for (auto& slot : model.named_buffers()) slots.push_back(slot);
  if (slots.size() != ckpt.records.size())
    throw DataError("checkpoint holds " + std::to_string(ckpt.records.size()) + " tensors, model expects " +
                    std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& r = ckpt.records[i];
    if (r.name != slots[i].first) throw DataError("checkpoint tensor " + r.name + " where " + slots[i].first + " expected");
    Dense<float>& dst = *slots[i].second;
    if (r.shape != dst.shape)
      throw DataError("checkpoint tensor " + r.name + " has shape " + to_string(r.shape) + ", model expects " +
                      to_string(dst.shape));
    std::memcpy(dst.data.data(), r.values.data(), r.values.size() * sizeof(float));
  }
}

}  // namespace barnet
