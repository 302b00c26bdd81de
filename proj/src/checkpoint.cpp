#include "spse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spse/errors.hpp"

namespace spse {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'S', 'E'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& tensor) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = tensor;
      return;
    }
  }
  entries_.emplace_back(name, tensor);
}

bool Checkpoint::contains(const std::string& name) const { return find(name).has_value(); }

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw FormatError("checkpoint has no entry '" + name + "'");
}

std::optional<Tensor> Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  return std::nullopt;
}

std::vector<std::string> Checkpoint::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_)
    if (n.starts_with(prefix)) out.push_back(n);
  return out;
}

std::vector<std::uint8_t> Checkpoint::to_bytes() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, tensor] : entries_) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint Checkpoint::from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kMagic, 4)) throw FormatError("not an SPSE container (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    throw FormatError("unsupported SPSE container version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  const std::uint32_t count = in.u32();
  Checkpoint ck;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank > 16) throw FormatError("implausible rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = numel(shape);
    if (n > in.remaining() / 8) throw FormatError("payload of '" + name + "' exceeds container size");
    std::vector<double> data(n);
    for (auto& v : data) v = in.f64();
    ck.entries_.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw FormatError("trailing bytes after last checkpoint entry");
  return ck;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace spse
