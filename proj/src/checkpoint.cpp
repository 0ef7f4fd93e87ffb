#include "flux/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace flux {

void save_checkpoint(std::vector<std::pair<std::string, Tensord>> params,
                     const std::string& path_prefix) {
  std::filesystem::path bin(path_prefix + ".bin");
  if (bin.has_parent_path())
    std::filesystem::create_directories(bin.parent_path());
  std::ofstream f(bin, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + bin.string());
  nlohmann::json index;
  Index offset = 0;
  for (auto& [name, t] : params) {
    f.write(reinterpret_cast<const char*>(t.value().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    index[name] = {{"offset", offset}, {"shape", t.shape()}};
    offset += t.size();
  }
  std::ofstream jf(path_prefix + ".json");
  jf << index.dump(2) << "\n";
}

void load_checkpoint(std::vector<std::pair<std::string, Tensord>> params,
                     const std::string& path_prefix) {
  std::ifstream jf(path_prefix + ".json");
  if (!jf)
    throw std::runtime_error("checkpoint: cannot read " + path_prefix + ".json");
  nlohmann::json index = nlohmann::json::parse(jf);
  std::ifstream f(path_prefix + ".bin", std::ios::binary);
  if (!f)
    throw std::runtime_error("checkpoint: cannot read " + path_prefix + ".bin");
  for (auto& [name, t] : params) {
    if (!index.contains(name))
      throw std::runtime_error("checkpoint: missing tensor " + name);
    auto entry = index[name];
    auto shape = entry["shape"].get<std::vector<Index>>();
    if (shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name +
                               ": file " + shape_str(shape) + " vs model " +
                               shape_str(t.shape()));
    f.seekg(static_cast<std::streamoff>(entry["offset"].get<Index>() *
                                        static_cast<Index>(sizeof(double))));
    f.read(reinterpret_cast<char*>(t.value().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

}  // namespace flux
