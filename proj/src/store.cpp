#include "s2p/store.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "s2p/error.hpp"

namespace s2p::store {

namespace {

constexpr char kMagic[4] = {'S', '2', 'P', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CorruptDataError("truncated archive: " + path.string());
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const std::filesystem::path& path,
                        std::size_t limit) {
  auto len = read_raw<std::uint32_t>(is, path);
  if (len > limit) throw CorruptDataError("oversized entry in " + path.string());
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw CorruptDataError("truncated archive: " + path.string());
  return s;
}

}  // namespace

void Archive::put_text(const std::string& name, std::string value) {
  text_[name] = std::move(value);
}

void Archive::put_tensor(const std::string& name, Tensor value) {
  if (value.empty()) throw PreconditionError("put_tensor: empty tensor " + name);
  tensors_[name] = std::move(value);
}

bool Archive::has_text(const std::string& name) const {
  return text_.count(name) != 0;
}

bool Archive::has_tensor(const std::string& name) const {
  return tensors_.count(name) != 0;
}

const std::string& Archive::text(const std::string& name) const {
  auto it = text_.find(name);
  if (it == text_.end())
    throw CorruptDataError("archive missing text entry: " + name);
  return it->second;
}

const Tensor& Archive::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw CorruptDataError("archive missing tensor: " + name);
  return it->second;
}

std::vector<std::string> Archive::tensor_names() const {
  std::vector<std::string> names;
  names.reserve(tensors_.size());
  for (const auto& [k, v] : tensors_) names.push_back(k);
  return names;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  write_raw<std::uint32_t>(os, kVersion);

  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(text_.size()));
  for (const auto& [k, v] : text_) {
    write_string(os, k);
    write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
    os.write(v.data(), static_cast<std::streamsize>(v.size()));
  }

  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [k, t] : tensors_) {
    write_string(os, k);
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_raw<std::int32_t>(os, t.dim(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("no such file: " + path.string());

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptDataError("not an archive: " + path.string());
  auto version = read_raw<std::uint32_t>(is, path);
  if (version != kVersion)
    throw VersionMismatchError("archive version " + std::to_string(version) +
                               " unsupported: " + path.string());

  Archive a;
  auto n_text = read_raw<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_text; ++i) {
    std::string key = read_string(is, path, 1 << 20);
    auto vlen = read_raw<std::uint64_t>(is, path);
    if (vlen > (1ull << 32)) throw CorruptDataError("oversized text entry");
    std::string val(static_cast<std::size_t>(vlen), '\0');
    is.read(val.data(), static_cast<std::streamsize>(vlen));
    if (!is) throw CorruptDataError("truncated archive: " + path.string());
    a.text_[std::move(key)] = std::move(val);
  }

  auto n_tensors = read_raw<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string key = read_string(is, path, 1 << 20);
    auto ndim = read_raw<std::uint32_t>(is, path);
    if (ndim < 1 || ndim > 4)
      throw CorruptDataError("bad tensor rank in " + path.string());
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = read_raw<std::int32_t>(is, path);
      if (d < 1 || d > (1 << 24)) throw CorruptDataError("bad tensor dim");
      numel *= static_cast<std::size_t>(d);
    }
    std::vector<double> values(numel);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw CorruptDataError("truncated archive: " + path.string());
    a.tensors_[std::move(key)] = Tensor(std::move(shape), std::move(values));
  }
  return a;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("no such file: " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CorruptDataError("bad manifest line in " + path.string() + ": " + line);
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace s2p::store
