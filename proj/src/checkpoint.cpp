#include "pmn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pmn/jsonw.hpp"
#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pmn {

namespace {
constexpr char kMagic[4] = {'P', 'M', 'N', '1'};

nlohmann::json parse_meta(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError("checkpoint: bad metadata JSON");
  return j;
}
}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<CheckpointSection>& sections) {
  JVal tensors = JVal::arr();
  for (const auto& sec : sections) {
    for (const auto& e : sec.params->entries()) {
      JVal shape = JVal::arr();
      for (size_t d : e.value.shape()) shape.push(JVal::integer(static_cast<int64_t>(d)));
      tensors.push(JVal::obj()
                       .set("set", JVal::str(sec.component))
                       .set("name", JVal::str(e.name))
                       .set("shape", std::move(shape))
                       .set("trainable", JVal::boolean(e.trainable)));
    }
  }
  std::string metadata = JVal::obj()
                             .set("format", JVal::integer(1))
                             .set("module", JVal::str(meta.module))
                             .set("level", JVal::integer(meta.level))
                             .set("seed", JVal::integer(static_cast<int64_t>(meta.seed)))
                             .set("tensors", std::move(tensors))
                             .dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  uint32_t len = static_cast<uint32_t>(metadata.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  for (const auto& sec : sections)
    for (const auto& e : sec.params->entries())
      out.write(reinterpret_cast<const char*>(e.value.data()),
                static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

std::string read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in) throw IoError("checkpoint: truncated header in " + path);
  std::string metadata(len, '\0');
  in.read(metadata.data(), len);
  if (!in) throw IoError("checkpoint: truncated metadata in " + path);
  return metadata;
}

CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<CheckpointSection>& sections) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string metadata(len, '\0');
  in.read(metadata.data(), len);
  if (!in) throw IoError("checkpoint: truncated metadata in " + path);

  auto j = parse_meta(metadata);
  if (j.value("format", 0) != 1)
    throw IoError("checkpoint: unsupported format version in " + path);
  CheckpointMeta meta;
  meta.module = j.value("module", "");
  meta.level = j.value("level", 0);
  meta.seed = j.value("seed", 0ull);

  // Stored tensor list must agree with the receiving sections.
  std::vector<std::tuple<std::string, std::string, std::vector<size_t>>> stored;
  for (const auto& t : j.at("tensors")) {
    std::vector<size_t> shape;
    for (const auto& d : t.at("shape")) shape.push_back(d.get<size_t>());
    stored.emplace_back(t.at("set").get<std::string>(),
                        t.at("name").get<std::string>(), std::move(shape));
  }
  size_t idx = 0;
  for (const auto& sec : sections) {
    for (auto& e : sec.params->entries()) {
      if (idx >= stored.size())
        throw IoError("checkpoint: " + path + " has fewer tensors than expected");
      const auto& [sset, sname, sshape] = stored[idx];
      if (sset != sec.component || sname != e.name)
        throw IoError("checkpoint: tensor order mismatch at " + sset + "." + sname +
                      " (expected " + sec.component + "." + e.name + ")");
      if (sshape != e.value.shape())
        throw IoError("checkpoint: shape mismatch for " + sset + "." + sname +
                      ": file has " + Tensor::shape_str(sshape) + ", module has " +
                      Tensor::shape_str(e.value.shape()));
      ++idx;
    }
  }
  if (idx != stored.size())
    throw IoError("checkpoint: " + path + " has more tensors than expected");

  for (const auto& sec : sections)
    for (auto& e : sec.params->entries()) {
      in.read(reinterpret_cast<char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(double)));
      if (!in) throw IoError("checkpoint: truncated payload in " + path);
    }
  return meta;
}

}  // namespace pmn
