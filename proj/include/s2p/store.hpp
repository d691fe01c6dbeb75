#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "s2p/tensor.hpp"

namespace s2p::store {

// Binary container holding named text entries and named tensors. Entries are
// written in sorted key order so saving the same content twice produces
// byte-identical files. Little-endian host assumed.
class Archive {
 public:
  void put_text(const std::string& name, std::string value);
  void put_tensor(const std::string& name, Tensor value);

  bool has_text(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  std::vector<std::string> tensor_names() const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> text_;
  std::map<std::string, Tensor> tensors_;
};

// Plain key=value text file, one pair per line, written sorted. Lines that
// are blank or start with '#' are skipped on read.
using Manifest = std::map<std::string, std::string>;

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace s2p::store
