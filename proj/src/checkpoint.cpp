#include "goalign/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "goalign/errors.hpp"

namespace goalign::ckpt {

using nlohmann::json;

namespace {

json vision_to_json(const enc::VisionEncoderConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"depth", c.depth},
          {"dim", c.dim},               {"heads", c.heads}};
}

enc::VisionEncoderConfig vision_from_json(const json& j) {
  enc::VisionEncoderConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.depth = j.at("depth").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  return c;
}

json text_to_json(const enc::TextEncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"depth", c.depth},           {"dim", c.dim},
          {"heads", c.heads},           {"pe_base_len", c.pe_base_len},
          {"pe_keep", c.pe_keep}};
}

enc::TextEncoderConfig text_from_json(const json& j) {
  enc::TextEncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.depth = j.at("depth").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.pe_base_len = j.at("pe_base_len").get<int>();
  c.pe_keep = j.at("pe_keep").get<int>();
  return c;
}

json tensor_dir(const enc::ParamMap& m) {
  json arr = json::array();
  for (const auto& [name, mat] : m)
    arr.push_back({{"name", name}, {"rows", mat.rows}, {"cols", mat.cols}});
  return arr;
}

void write_tensors(std::ofstream& f, const enc::ParamMap& m) {
  for (const auto& [name, mat] : m)
    f.write(reinterpret_cast<const char*>(mat.a.data()),
            static_cast<std::streamsize>(mat.a.size() * sizeof(double)));
}

enc::ParamMap read_tensors(std::ifstream& f, const json& dir) {
  enc::ParamMap m;
  for (const auto& t : dir) {
    ad::Mat mat(t.at("rows").get<int>(), t.at("cols").get<int>());
    f.read(reinterpret_cast<char*>(mat.a.data()),
           static_cast<std::streamsize>(mat.a.size() * sizeof(double)));
    if (!f) throw DataError("load_checkpoint: truncated tensor data");
    m[t.at("name").get<std::string>()] = std::move(mat);
  }
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  json header = {{"vision", vision_to_json(c.model.vision)},
                 {"text", text_to_json(c.model.text)},
                 {"vocab", c.model.vocab.words},
                 {"tensors", tensor_dir(c.model.params)},
                 {"opt_tensors", tensor_dir(c.opt_state)},
                 {"meta", c.meta}};
  std::string hs = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + tmp.string());
    f << kCheckpointVersion << "\n";
    uint64_t len = hs.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_tensors(f, c.model.params);
    write_tensors(f, c.opt_state);
    if (!f) throw DataError("save_checkpoint: write failed on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path.string());
  std::string version;
  std::getline(f, version);
  if (version != kCheckpointVersion)
    throw DataError("load_checkpoint: version mismatch, expected " +
                    std::string(kCheckpointVersion) + ", got " + version);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len == 0 || len > (1ull << 32))
    throw DataError("load_checkpoint: bad header length");
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("load_checkpoint: truncated header");
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw DataError("load_checkpoint: malformed header: " + std::string(e.what()));
  }
  Checkpoint c;
  try {
    c.model.vision = vision_from_json(header.at("vision"));
    c.model.text = text_from_json(header.at("text"));
    c.model.vocab =
        enc::Vocabulary::from_words(header.at("vocab").get<std::vector<std::string>>());
    c.meta = header.value("meta", json::object());
    c.model.params = read_tensors(f, header.at("tensors"));
    c.opt_state = read_tensors(f, header.at("opt_tensors"));
  } catch (const json::exception& e) {
    throw DataError("load_checkpoint: bad header fields: " + std::string(e.what()));
  }
  return c;
}

uint64_t params_fingerprint(const enc::ParamMap& params) {
  uint64_t h = 14695981039346656037ull;
  auto feed = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, mat] : params) {
    feed(name.data(), name.size());
    feed(mat.a.data(), mat.a.size() * sizeof(double));
  }
  return h;
}

std::string fingerprint_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

}  // namespace goalign::ckpt
