#include "ciem/model.hpp"

#include <fstream>
#include <string>

#include "ciem/binary_io.hpp"

namespace ciem {

std::string_view to_string(ConditionKind k) {
  return k == ConditionKind::kCategorical ? "categorical" : "continuous";
}

ConditionKind condition_kind_from_string(std::string_view s) {
  if (s == "categorical") return ConditionKind::kCategorical;
  if (s == "continuous") return ConditionKind::kContinuous;
  throw ConfigError("unknown condition kind '" + std::string(s) + "'");
}

template <typename T>
void ModelBundle<T>::validate() const {
  if (trunk.layers.empty()) throw ConfigError("model has no trunk");
  if (speaker.layers.empty()) throw ConfigError("model has no speaker head");
  if (speaker.input_dim() != trunk.output_dim()) {
    throw ShapeError("speaker head input " + std::to_string(speaker.input_dim()) +
                     " != trunk output " + std::to_string(trunk.output_dim()));
  }
  if (speaker.layers.back().activation != Activation::kSoftmax) {
    throw ConfigError("speaker head must end in softmax");
  }
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& h = heads[i];
    if (h.net.layers.empty() || h.net.input_dim() != trunk.output_dim()) {
      throw ShapeError("condition head " + std::to_string(i) +
                       " does not fit the trunk output");
    }
    if (!(h.lambda >= T{0})) throw ConfigError("condition head lambda must be >= 0");
    const Activation last = h.net.layers.back().activation;
    if (h.kind == ConditionKind::kCategorical && last != Activation::kSoftmax) {
      throw ConfigError("categorical condition head must end in softmax");
    }
    if (h.kind == ConditionKind::kContinuous && last != Activation::kLinear) {
      throw ConfigError("continuous condition head must end in a linear layer");
    }
  }
}

template struct ModelBundle<float>;
template struct ModelBundle<double>;

namespace {

constexpr std::string_view kMagic = "CIEM";

void write_layer(std::ostream& os, const DenseLayer<float>& l) {
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weights.rows()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weights.cols()));
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(l.activation));
  binio::put_floats(os, l.weights.values());
  binio::put_floats(os, l.bias);
}

DenseLayer<float> read_layer(std::istream& is) {
  const auto rows = binio::get<std::uint32_t>(is);
  const auto cols = binio::get<std::uint32_t>(is);
  const auto act = binio::get<std::uint8_t>(is);
  if (act > static_cast<std::uint8_t>(Activation::kLinear)) {
    throw DataError("unknown activation tag " + std::to_string(act));
  }
  if (rows == 0 || cols == 0) throw DataError("zero-sized layer in model file");
  DenseLayer<float> l;
  l.weights = Matrix<float>(rows, cols);
  binio::get_floats(is, l.weights.values());
  l.bias.resize(rows);
  binio::get_floats(is, l.bias);
  l.activation = static_cast<Activation>(act);
  return l;
}

void write_layers(std::ostream& os, const Network<float>& net) {
  for (const auto& l : net.layers) write_layer(os, l);
}

Network<float> read_layers(std::istream& is, std::uint32_t count) {
  Network<float> net;
  for (std::uint32_t i = 0; i < count; ++i) net.layers.push_back(read_layer(is));
  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    if (net.layers[i].in_dim() != net.layers[i - 1].out_dim()) {
      throw DataError("inconsistent layer dimensions in model file");
    }
  }
  return net;
}

}  // namespace

void write_model(std::ostream& os, const ModelBundle<float>& bundle) {
  bundle.validate();
  binio::put_magic(os, kMagic);
  binio::put<std::uint32_t>(os, kModelFormatVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.trunk.layers.size()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.speaker.layers.size()));
  write_layers(os, bundle.trunk);
  write_layers(os, bundle.speaker);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.heads.size()));
  for (const auto& h : bundle.heads) {
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(h.kind));
    binio::put<double>(os, static_cast<double>(h.lambda));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(h.net.layers.size()));
    write_layers(os, h.net);
  }
}

ModelBundle<float> read_model(std::istream& is) {
  binio::expect_magic(is, kMagic);
  const auto version = binio::get<std::uint32_t>(is);
  if (version != kModelFormatVersion) {
    throw DataError("unsupported model format version " + std::to_string(version));
  }
  ModelBundle<float> b;
  const auto trunk_layers = binio::get<std::uint32_t>(is);
  const auto speaker_layers = binio::get<std::uint32_t>(is);
  b.trunk = read_layers(is, trunk_layers);
  b.speaker = read_layers(is, speaker_layers);
  const auto head_count = binio::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < head_count; ++i) {
    ConditionHead<float> h;
    const auto kind = binio::get<std::uint8_t>(is);
    if (kind > 1) throw DataError("unknown condition head kind");
    h.kind = static_cast<ConditionKind>(kind);
    h.lambda = static_cast<float>(binio::get<double>(is));
    h.net = read_layers(is, binio::get<std::uint32_t>(is));
    b.heads.push_back(std::move(h));
  }
  try {
    b.validate();
  } catch (const Error& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  }
  return b;
}

void save_model(const std::filesystem::path& path, const ModelBundle<float>& bundle) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    write_model(os, bundle);
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle<float> load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open model " + path.string());
  return read_model(is);
}

}  // namespace ciem
