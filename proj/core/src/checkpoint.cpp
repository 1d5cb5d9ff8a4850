#include "segdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "segdiff/errors.hpp"

namespace segdiff {

void ModelSpec::validate() const {
  net.validate();
  encoding.validate();
  if (!(input_scale > 0.0 && input_scale <= 1.0)) throw ValidationError("input_scale must be in (0, 1]");
}

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"net", to_json(spec.net)},
          {"prediction", to_string(spec.prediction)},
          {"encoding", to_string(spec.encoding.kind)},
          {"n_classes", spec.encoding.n_classes},
          {"state_channels", spec.state_channels()},
          {"schedule", {{"input_scale", spec.input_scale},
                        {"weighting", to_string(spec.weighting.kind)},
                        {"bias", spec.weighting.bias}}}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.net = net_config_from_json(j.at("net"));
  spec.prediction = parse_prediction_type(j.at("prediction").get<std::string>());
  spec.encoding.kind = parse_encoding_kind(j.at("encoding").get<std::string>());
  spec.encoding.n_classes = j.at("n_classes").get<int>();
  const auto& s = j.at("schedule");
  spec.input_scale = s.at("input_scale").get<double>();
  spec.weighting.kind = parse_weighting_kind(s.at("weighting").get<std::string>());
  spec.weighting.bias = s.at("bias").get<double>();
  spec.validate();
  if (j.contains("state_channels") && j["state_channels"].get<int>() != spec.state_channels()) {
    throw ValidationError("checkpoint state_channels disagrees with its encoding");
  }
  return spec;
}

namespace {

constexpr char kMagic[4] = {'S', 'G', 'D', 'F'};

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw IoError("truncated checkpoint " + path.string());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_floats(std::ostream& out, std::span<const float> values) {
  put_le<std::uint64_t>(out, values.size());
  for (float f : values) put_le(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> get_floats(std::istream& in, const std::filesystem::path& path) {
  const auto n = get_le<std::uint64_t>(in, path);
  if (n > (std::uint64_t{1} << 34)) throw IoError("implausible tensor size in " + path.string());
  std::vector<float> out(static_cast<std::size_t>(n));
  for (auto& f : out) f = std::bit_cast<float>(get_le<std::uint32_t>(in, path));
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = {{"model", to_json(ckpt.spec)},
                           {"iteration", ckpt.iteration},
                           {"has_optimizer", ckpt.optimizer.has_value()},
                           {"provenance", ckpt.provenance}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string());
    out.write(kMagic, 4);
    put_le(out, kCheckpointVersion);
    put_le(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_floats(out, ckpt.parameters);
    if (ckpt.optimizer) {
      put_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.optimizer->step));
      put_floats(out, ckpt.optimizer->m);
      put_floats(out, ckpt.optimizer->v);
    }
    if (!out.flush()) throw IoError("failed to write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(path.string() + " is not a segdiff checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + " has version " + std::to_string(version) +
                  ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto len = get_le<std::uint32_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw IoError("truncated checkpoint header in " + path.string());

  Checkpoint ckpt;
  bool has_optimizer = false;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.spec = model_spec_from_json(header.at("model"));
    ckpt.iteration = header.at("iteration").get<std::int64_t>();
    has_optimizer = header.at("has_optimizer").get<bool>();
    ckpt.provenance = header.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  ckpt.parameters = get_floats(in, path);
  const std::size_t expected = parameter_count(ckpt.spec.net, ckpt.spec.state_channels());
  if (ckpt.parameters.size() != expected) {
    throw IoError("checkpoint " + path.string() + " holds " + std::to_string(ckpt.parameters.size()) +
                  " parameters, its header describes " + std::to_string(expected));
  }
  if (has_optimizer) {
    OptimizerState s;
    s.step = static_cast<std::int64_t>(get_le<std::uint64_t>(in, path));
    s.m = get_floats(in, path);
    s.v = get_floats(in, path);
    if (s.m.size() != expected || s.v.size() != expected) {
      throw IoError("optimizer state in " + path.string() + " does not match the parameters");
    }
    ckpt.optimizer = std::move(s);
  }
  return ckpt;
}

std::vector<float> flatten_parameters(const UNet<float>& net) {
  std::vector<float> out;
  out.reserve(net.parameter_count());
  for (const auto* p : net.parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void assign_parameters(UNet<float>& net, std::span<const float> values) {
  if (values.size() != net.parameter_count()) {
    throw ValidationError("parameter vector has " + std::to_string(values.size()) +
                          " entries, network needs " + std::to_string(net.parameter_count()));
  }
  std::size_t k = 0;
  for (auto* p : net.parameters()) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), p->size(), p->value.begin());
    k += p->size();
  }
}

std::unique_ptr<UNet<float>> build_network(const ModelSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  return std::make_unique<UNet<float>>(spec.net, spec.state_channels(), spec.prediction, init_seed);
}

std::unique_ptr<UNet<float>> restore_network(const Checkpoint& ckpt) {
  auto net = build_network(ckpt.spec, 0);
  assign_parameters(*net, ckpt.parameters);
  return net;
}

}  // namespace segdiff
