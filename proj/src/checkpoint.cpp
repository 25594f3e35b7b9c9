#include "bimanual/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bimanual {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'M', 'C', 'K'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json read_header(Reader& r) {
  const std::string_view magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto n = r.get<std::uint64_t>();
  return nlohmann::json::parse(r.take(static_cast<std::size_t>(n)));
}

}  // namespace

std::string serialize_checkpoint(const nlohmann::json& header, const nn::Module& module) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string h = header.dump();
  put<std::uint64_t>(out, h.size());
  out += h;
  const auto params = module.named_parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.dim()));
    for (std::size_t e : p.tensor.shape()) put<std::uint64_t>(out, e);
    for (double v : p.tensor.data()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

nlohmann::json checkpoint_header(std::string_view bytes) {
  Reader r(bytes);
  return read_header(r);
}

nlohmann::json deserialize_checkpoint(std::string_view bytes, const nn::Module& module) {
  Reader r(bytes);
  nlohmann::json header = read_header(r);
  std::map<std::string, Tensor> params;
  for (auto& p : module.named_parameters()) params.emplace(p.name, p.tensor);
  const auto count = r.get<std::uint32_t>();
  std::size_t matched = 0;
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::string name(r.take(r.get<std::uint32_t>()));
    const auto ndim = r.get<std::uint32_t>();
    Shape shape(ndim);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    auto it = params.find(name);
    if (it == params.end()) throw std::runtime_error("checkpoint: unexpected parameter " + name);
    if (it->second.shape() != shape) {
      throw std::runtime_error("checkpoint: parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                               shape_str(it->second.shape()));
    }
    auto dst = it->second.mutable_data();
    for (double& v : dst) v = static_cast<double>(r.get<float>());
    ++matched;
  }
  if (matched != params.size()) throw std::runtime_error("checkpoint: missing parameters");
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return header;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

void save_checkpoint(const std::string& path, const nlohmann::json& header, const nn::Module& module) {
  write_file(path, serialize_checkpoint(header, module));
}

nlohmann::json load_checkpoint(const std::string& path, const nn::Module& module) {
  return deserialize_checkpoint(read_file(path), module);
}

nlohmann::json read_checkpoint_header(const std::string& path) { return checkpoint_header(read_file(path)); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fnv1a_hex(std::string_view bytes) {
  const std::uint64_t h = fnv1a64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bimanual
