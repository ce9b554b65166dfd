#include "mvdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mvdet/error.hpp"

namespace mvdet {

using nlohmann::json;
using nn::Param;

namespace {

constexpr char kMagic[4] = {'M', 'V', 'D', 'C'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw CheckpointError(CheckpointFault::Corrupt, "truncated checkpoint file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string take_bytes(const std::string& in, size_t& pos, size_t n) {
  if (pos + n > in.size())
    throw CheckpointError(CheckpointFault::Corrupt, "truncated checkpoint file");
  std::string out = in.substr(pos, n);
  pos += n;
  return out;
}

}  // namespace

void TensorContainer::save(const std::filesystem::path& path) const {
  std::string body;
  body.append(kMagic, 4);
  put(body, kVersion);
  const std::string meta_str = meta.dump();
  put(body, uint64_t(meta_str.size()));
  body.append(meta_str);
  put(body, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put(body, uint32_t(name.size()));
    body.append(name);
    put(body, uint32_t(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put(body, uint32_t(t.dim(i)));
    body.append(reinterpret_cast<const char*>(t.data()), size_t(t.size()) * sizeof(double));
  }
  put(body, fnv1a64(body));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(body.data(), std::streamsize(body.size()));
  if (!out) throw IoError("short checkpoint write: " + path.string());
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();

  size_t pos = 0;
  const std::string magic = take_bytes(body, pos, 4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointFault::Corrupt, "not a checkpoint file: " + path.string());
  const uint32_t version = take<uint32_t>(body, pos);
  if (version != kVersion)
    throw CheckpointError(CheckpointFault::UnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kVersion) + ")");
  if (body.size() < 8 || fnv1a64(body.substr(0, body.size() - 8)) !=
                             [&] {
                               size_t p = body.size() - 8;
                               return take<uint64_t>(body, p);
                             }())
    throw CheckpointError(CheckpointFault::Corrupt, "checkpoint checksum mismatch: " + path.string());

  TensorContainer c;
  const uint64_t meta_len = take<uint64_t>(body, pos);
  const std::string meta_str = take_bytes(body, pos, size_t(meta_len));
  try {
    c.meta = json::parse(meta_str);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointFault::Corrupt, std::string("bad checkpoint meta: ") + e.what());
  }
  const uint32_t count = take<uint32_t>(body, pos);
  c.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = take<uint32_t>(body, pos);
    std::string name = take_bytes(body, pos, name_len);
    const uint32_t ndim = take<uint32_t>(body, pos);
    std::vector<int> shape(ndim);
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = int(take<uint32_t>(body, pos));
      numel *= shape[d];
    }
    Tensor t(shape);
    const std::string raw = take_bytes(body, pos, size_t(numel) * sizeof(double));
    std::memcpy(t.data(), raw.data(), raw.size());
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

namespace {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

// Copies container tensors onto the given named parameters; every parameter
// must be matched by name and shape, and no container tensor may be left over.
void load_named(const TensorContainer& c,
                const std::vector<std::pair<std::string, Param*>>& params,
                const std::string& context) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : c.tensors) by_name[name] = &t;
  for (const auto& [name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError(CheckpointFault::Incompatible,
                            context + ": checkpoint is missing a tensor", name);
    if (it->second->shape() != p->value.shape())
      throw CheckpointError(CheckpointFault::Incompatible,
                            context + ": shape mismatch, checkpoint has " +
                                shape_str(it->second->shape()) + ", model expects " +
                                shape_str(p->value.shape()),
                            name);
    p->value = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw CheckpointError(CheckpointFault::Incompatible,
                          context + ": checkpoint carries an unexpected tensor",
                          by_name.begin()->first);
}

std::vector<std::pair<std::string, Param*>> plain_named(std::vector<Param*> ps) {
  std::vector<std::pair<std::string, Param*>> out;
  for (Param* p : ps) out.emplace_back(p->name, p);
  return out;
}

void save_encoder_container(std::vector<Param*> params, const BackboneSpec& spec,
                            const std::string& kind, const std::filesystem::path& path) {
  TensorContainer c;
  c.meta = {{"format", "mvdet.checkpoint.v1"},
            {"kind", kind},
            {"backbone", {{"family", to_string(spec.family)},
                          {"feature_dim", spec.resolved_feature_dim()}}}};
  for (Param* p : params) c.tensors.emplace_back(p->name, p->value);
  c.save(path);
}

void load_encoder_container(std::vector<Param*> params, const std::string& kind,
                            const std::filesystem::path& path) {
  TensorContainer c = TensorContainer::load(path);
  const std::string got = c.meta.value("kind", "");
  if (got != kind)
    throw CheckpointError(CheckpointFault::Incompatible,
                          "expected a '" + kind + "' checkpoint, found '" + got + "'");
  load_named(c, plain_named(std::move(params)), kind);
}

}  // namespace

DetectorModel build_model(const ModelConfig& config) {
  DetectorModel model = DetectorModel::build(config);
  if (config.view_backbone.checkpoint) {
    // the same pretrained weights seed each view encoder; they diverge in
    // fine-tuning and never share parameters
    for (ViewKind k : {ViewKind::Global, ViewKind::Middle, ViewKind::Local})
      if (ViewEncoder* e = model.view_encoder(k))
        load_view_encoder(*e, *config.view_backbone.checkpoint);
  }
  if (model.pose_encoder()) {
    if (config.pose_checkpoint)
      load_pose_encoder(*model.pose_encoder(), *config.pose_checkpoint);
    else if (config.pose_backbone.checkpoint)
      load_encoder_container(model.pose_encoder()->backbone().net->params(), "view_encoder",
                             *config.pose_backbone.checkpoint);
  }
  return model;
}

void save_checkpoint(DetectorModel& model, const std::filesystem::path& path,
                     const json& extra_meta) {
  TensorContainer c;
  c.meta = {{"format", "mvdet.checkpoint.v1"},
            {"kind", "detector"},
            {"model", model.config().to_json()}};
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) c.meta[it.key()] = it.value();
  for (auto& [name, p] : model.named_params()) c.tensors.emplace_back(name, p->value);
  c.save(path);
}

DetectorModel load_checkpoint(const std::filesystem::path& path) {
  TensorContainer c = TensorContainer::load(path);
  if (c.meta.value("kind", "") != "detector")
    throw CheckpointError(CheckpointFault::Incompatible, "not a detector checkpoint");
  ModelConfig config = ModelConfig::from_json(c.meta.at("model"));
  // weights come from the container itself, not from nested references
  config.pose_checkpoint.reset();
  config.view_backbone.checkpoint.reset();
  config.pose_backbone.checkpoint.reset();
  DetectorModel model = DetectorModel::build(config);
  load_named(c, model.named_params(), "detector");
  return model;
}

json read_checkpoint_meta(const std::filesystem::path& path) {
  return TensorContainer::load(path).meta;
}

void save_pose_encoder(PoseEncoder& enc, const BackboneSpec& spec,
                       const std::filesystem::path& path) {
  save_encoder_container(enc.params(), spec, "pose_encoder", path);
}

void load_pose_encoder(PoseEncoder& enc, const std::filesystem::path& path) {
  load_encoder_container(enc.params(), "pose_encoder", path);
}

void save_view_encoder(ViewEncoder& enc, const BackboneSpec& spec,
                       const std::filesystem::path& path) {
  save_encoder_container(enc.params(), spec, "view_encoder", path);
}

void load_view_encoder(ViewEncoder& enc, const std::filesystem::path& path) {
  load_encoder_container(enc.params(), "view_encoder", path);
}

}  // namespace mvdet
