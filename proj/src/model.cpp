#include "glyphforge/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace glyphforge {

using nlohmann::json;

void ArchSpec::validate() const {
  require(input_side >= 1, ErrorCode::invalid_argument, "arch: input_side must be positive");
  require(!conv_channels.empty(), ErrorCode::invalid_argument, "arch: at least one conv block required");
  const std::size_t pools = std::size_t{1} << conv_channels.size();
  require(input_side % pools == 0, ErrorCode::invalid_argument,
          "arch: input_side " + std::to_string(input_side) + " not divisible by " + std::to_string(pools));
  for (auto c : conv_channels) require(c >= 1, ErrorCode::invalid_argument, "arch: conv width must be positive");
  require(fc1_width >= 1, ErrorCode::invalid_argument, "arch: fc1_width must be positive");
  require(n_classes >= 1, ErrorCode::invalid_argument, "arch: n_classes must be positive");
  require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::invalid_argument, "arch: dropout_p must lie in [0, 1)");
}

std::size_t ArchSpec::parameter_count() const {
  std::size_t n = 0, in = 1;
  for (auto c : conv_channels) {
    n += c * in * 9 + c + 2 * c;
    in = c;
  }
  n += fc1_width * flatten_width() + fc1_width;
  n += n_classes * fc1_width + n_classes;
  return n;
}

template <class T>
std::vector<ParamSlot<T>> BasicClassifierParams<T>::trainable() {
  std::vector<ParamSlot<T>> slots;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1) + ".";
    slots.push_back({p + "kernels", &blocks[i].kernels, true});
    slots.push_back({p + "bias", &blocks[i].bias, false});
    slots.push_back({p + "bn_scale", &blocks[i].bn_scale, false});
    slots.push_back({p + "bn_shift", &blocks[i].bn_shift, false});
  }
  slots.push_back({"fc1.weights", &fc1_weights, true});
  slots.push_back({"fc1.bias", &fc1_bias, false});
  slots.push_back({"fc2.weights", &fc2_weights, true});
  slots.push_back({"fc2.bias", &fc2_bias, false});
  return slots;
}

template <class T>
std::vector<std::pair<std::string, const BasicTensor<T>*>> BasicClassifierParams<T>::tensors() const {
  std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1) + ".";
    out.emplace_back(p + "kernels", &blocks[i].kernels);
    out.emplace_back(p + "bias", &blocks[i].bias);
    out.emplace_back(p + "bn_scale", &blocks[i].bn_scale);
    out.emplace_back(p + "bn_shift", &blocks[i].bn_shift);
    out.emplace_back(p + "running_mean", &blocks[i].running.mean);
    out.emplace_back(p + "running_var", &blocks[i].running.var);
  }
  out.emplace_back("fc1.weights", &fc1_weights);
  out.emplace_back("fc1.bias", &fc1_bias);
  out.emplace_back("fc2.weights", &fc2_weights);
  out.emplace_back("fc2.bias", &fc2_bias);
  return out;
}

template struct BasicClassifierParams<float>;
template struct BasicClassifierParams<double>;

namespace {

void check_vocabulary(const ArchSpec& arch, const std::vector<std::string>& vocabulary) {
  require(vocabulary.size() == arch.n_classes, ErrorCode::invalid_argument,
          "vocabulary has " + std::to_string(vocabulary.size()) + " labels for " + std::to_string(arch.n_classes) +
              " classes");
  std::set<std::string> seen(vocabulary.begin(), vocabulary.end());
  require(seen.size() == vocabulary.size(), ErrorCode::invalid_argument, "vocabulary labels must be unique");
}

// Expected shape of every stored tensor, in tensors() order.
std::vector<Shape> expected_shapes(const ArchSpec& arch) {
  std::vector<Shape> shapes;
  std::size_t in = 1;
  for (auto c : arch.conv_channels) {
    shapes.push_back({c, in, 3, 3});
    for (int i = 0; i < 5; ++i) shapes.push_back({c});
    in = c;
  }
  shapes.push_back({arch.fc1_width, arch.flatten_width()});
  shapes.push_back({arch.fc1_width});
  shapes.push_back({arch.n_classes, arch.fc1_width});
  shapes.push_back({arch.n_classes});
  return shapes;
}

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

template <class T>
void check_input(const ArchSpec& arch, const BasicTensor<T>& batch) {
  expect_rank("classifier input", batch.shape(), 4);
  expect_extent("classifier input", "channels", batch.dim(1), 1);
  expect_extent("classifier input", "height", batch.dim(2), arch.input_side);
  expect_extent("classifier input", "width", batch.dim(3), arch.input_side);
}

}  // namespace

ClassifierParams build_classifier(const ArchSpec& arch, std::vector<std::string> vocabulary, Rng& rng) {
  arch.validate();
  check_vocabulary(arch, vocabulary);
  ClassifierParams p;
  p.arch = arch;
  p.vocabulary = std::move(vocabulary);
  std::size_t in = 1;
  for (auto c : arch.conv_channels) {
    ConvBlockParams<float> b{Tensor({c, in, 3, 3}), Tensor({c}), Tensor({c}, 1.0f), Tensor({c}),
                             RunningStats<float>::identity(c)};
    kaiming_uniform(b.kernels, in * 9, rng);
    p.blocks.push_back(std::move(b));
    in = c;
  }
  p.fc1_weights = Tensor({arch.fc1_width, arch.flatten_width()});
  kaiming_uniform(p.fc1_weights, arch.flatten_width(), rng);
  p.fc1_bias = Tensor({arch.fc1_width});
  p.fc2_weights = Tensor({arch.n_classes, arch.fc1_width});
  kaiming_uniform(p.fc2_weights, arch.fc1_width, rng);
  p.fc2_bias = Tensor({arch.n_classes});
  return p;
}

template <class T>
BasicTensor<T> forward_train(BasicClassifierParams<T>& params, const BasicTensor<T>& batch, Rng& rng, Tape<T>& tape,
                             bool update_stats) {
  check_input(params.arch, batch);
  BasicTensor<T> x = batch;
  for (auto& b : params.blocks) {
    x = tape.conv2d(std::move(x), b.kernels, b.bias);
    x = tape.relu(std::move(x));
    x = tape.batchnorm2d(std::move(x), b.bn_scale, b.bn_shift, update_stats ? &b.running : nullptr, Mode::train);
    x = tape.maxpool2d(std::move(x));
  }
  x = tape.flatten(std::move(x));
  x = tape.linear(std::move(x), params.fc1_weights, params.fc1_bias);
  x = tape.relu(std::move(x));
  x = tape.dropout(std::move(x), params.arch.dropout_p, Mode::train, rng);
  return tape.linear(std::move(x), params.fc2_weights, params.fc2_bias);
}

namespace {

template <class T>
BasicTensor<T> features_eval(const BasicClassifierParams<T>& params, const BasicTensor<T>& batch) {
  check_input(params.arch, batch);
  BasicTensor<T> x = batch;
  for (const auto& b : params.blocks) {
    x = relu_forward(conv2d_forward(x, b.kernels, b.bias));
    x = batchnorm2d_eval(x, b.bn_scale, b.bn_shift, b.running);
    x = std::move(maxpool2d_forward(x).output);
  }
  const std::size_t n = x.dim(0);
  x = std::move(x).reshaped({n, x.size() / n});
  return relu_forward(linear_forward(x, params.fc1_weights, params.fc1_bias));
}

}  // namespace

template <class T>
BasicTensor<T> forward_eval(const BasicClassifierParams<T>& params, const BasicTensor<T>& batch) {
  return linear_forward(features_eval(params, batch), params.fc2_weights, params.fc2_bias);
}

Tensor extract_fc1(const ClassifierParams& params, const Tensor& batch) { return features_eval(params, batch); }

template <class T>
std::vector<BasicTensor<T>> parameter_gradients(std::vector<LayerGradients<T>>&& layers) {
  std::vector<BasicTensor<T>> out;
  for (auto& l : layers)
    for (auto& g : l.d_params) out.push_back(std::move(g));
  return out;
}

template BasicTensor<float> forward_train(BasicClassifierParams<float>&, const BasicTensor<float>&, Rng&,
                                          Tape<float>&, bool);
template BasicTensor<double> forward_train(BasicClassifierParams<double>&, const BasicTensor<double>&, Rng&,
                                           Tape<double>&, bool);
template BasicTensor<float> forward_eval(const BasicClassifierParams<float>&, const BasicTensor<float>&);
template BasicTensor<double> forward_eval(const BasicClassifierParams<double>&, const BasicTensor<double>&);
template std::vector<BasicTensor<float>> parameter_gradients(std::vector<LayerGradients<float>>&&);
template std::vector<BasicTensor<double>> parameter_gradients(std::vector<LayerGradients<double>>&&);

Tensor logits_chunked(const ClassifierParams& params, const Tensor& batch, std::size_t chunk) {
  check_input(params.arch, batch);
  const std::size_t n = batch.dim(0), per = batch.size() / n, k = params.arch.n_classes;
  Tensor out({n, k});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    std::vector<float> slice(batch.data() + start * per, batch.data() + (start + m) * per);
    const Tensor logits = forward_eval(params, Tensor({m, 1, params.arch.input_side, params.arch.input_side},
                                                      std::move(slice)));
    std::copy(logits.data(), logits.data() + m * k, out.data() + start * k);
  }
  return out;
}

std::size_t argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::vector<HeadPrediction> predict_head(const Tensor& logits, double temperature) {
  require(temperature > 0.0, ErrorCode::invalid_argument, "temperature must be positive");
  expect_rank("predict_head", logits.shape(), 2);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<HeadPrediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.values().subspan(i * k, k);
    const std::size_t best = argmax(row);
    double denom = 0.0;
    for (float v : row) denom += std::exp((static_cast<double>(v) - row[best]) / temperature);
    out[i] = {best, static_cast<float>(1.0 / denom)};
  }
  return out;
}

std::vector<JointPrediction> predict_joint(const FactoredClassifier& model, const Tensor& batch,
                                           double pitch_temperature, double secondary_temperature) {
  const auto p = predict_head(logits_chunked(model.pitch, batch), pitch_temperature);
  const auto s = predict_head(logits_chunked(model.secondary, batch), secondary_temperature);
  std::vector<JointPrediction> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = {p[i].label, s[i].label, p[i].confidence, s[i].confidence};
  return out;
}

// ---- serialization -----------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

json arch_to_json(const ArchSpec& a) {
  return {{"input_side", a.input_side},
          {"conv_channels", a.conv_channels},
          {"fc1_width", a.fc1_width},
          {"n_classes", a.n_classes},
          {"dropout_p", a.dropout_p}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  a.input_side = j.at("input_side").get<std::size_t>();
  a.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  a.fc1_width = j.at("fc1_width").get<std::size_t>();
  a.n_classes = j.at("n_classes").get<std::size_t>();
  a.dropout_p = j.at("dropout_p").get<double>();
  return a;
}

}  // namespace

std::string serialize(const ClassifierParams& params) {
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.tensors()) {
    manifest.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size() * 4;
  }
  const json header = {{"arch", arch_to_json(params.arch)},
                       {"vocabulary", params.vocabulary},
                       {"tensors", manifest},
                       {"data_bytes", offset}};
  const std::string text = header.dump();

  std::string out(kModelMagic, 4);
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& entry : params.tensors())
    for (float v : entry.second->values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ClassifierParams deserialize(std::string_view bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kModelMagic, 4) == 0, ErrorCode::bad_magic,
          "not a .glyf model file");
  require(bytes.size() >= 12, ErrorCode::truncated, "model header cut short");
  const std::uint32_t version = get_u32(bytes, 4);
  require(version == kModelFormatVersion, ErrorCode::bad_version,
          "unsupported model format version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes, 8);
  require(bytes.size() >= 12 + std::size_t{header_len}, ErrorCode::truncated, "model header cut short");

  json header;
  ClassifierParams p;
  std::vector<json> manifest;
  try {
    header = json::parse(bytes.substr(12, header_len));
    p.arch = arch_from_json(header.at("arch"));
    p.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    manifest = header.at("tensors").get<std::vector<json>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("model header: ") + e.what());
  }
  try {
    p.arch.validate();
    check_vocabulary(p.arch, p.vocabulary);
  } catch (const Error& e) {
    fail(ErrorCode::schema, std::string("model header: ") + e.what());
  }

  const auto shapes = expected_shapes(p.arch);
  require(manifest.size() == shapes.size(), ErrorCode::shape_mismatch,
          "model declares " + std::to_string(manifest.size()) + " tensors, architecture needs " +
              std::to_string(shapes.size()));
  std::size_t c_in = 1;
  for (auto c : p.arch.conv_channels) {
    p.blocks.push_back({Tensor({c, c_in, 3, 3}), Tensor({c}), Tensor({c}), Tensor({c}),
                        RunningStats<float>::identity(c)});
    c_in = c;
  }
  p.fc1_weights = Tensor(shapes[shapes.size() - 4]);
  p.fc1_bias = Tensor(shapes[shapes.size() - 3]);
  p.fc2_weights = Tensor(shapes[shapes.size() - 2]);
  p.fc2_bias = Tensor(shapes[shapes.size() - 1]);

  const std::string_view blob = bytes.substr(12 + header_len);
  auto targets = p.tensors();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Shape declared;
    std::size_t offset = 0;
    try {
      declared = manifest[i].at("shape").get<Shape>();
      offset = manifest[i].at("offset").get<std::size_t>();
      require(manifest[i].at("name").get<std::string>() == targets[i].first, ErrorCode::schema,
              "tensor " + std::to_string(i) + " should be " + targets[i].first);
    } catch (const json::exception& e) {
      fail(ErrorCode::schema, std::string("tensor manifest: ") + e.what());
    }
    require(declared == shapes[i], ErrorCode::shape_mismatch,
            targets[i].first + " declared " + shape_str(declared) + ", architecture needs " + shape_str(shapes[i]));
    auto* t = const_cast<Tensor*>(targets[i].second);
    const std::size_t need = t->size() * 4;
    require(offset <= blob.size() && blob.size() - offset >= need, ErrorCode::truncated,
            targets[i].first + " needs " + std::to_string(need) + " bytes at offset " + std::to_string(offset) +
                ", file has " + std::to_string(blob.size()));
    for (std::size_t k = 0; k < t->size(); ++k) (*t)[k] = std::bit_cast<float>(get_u32(blob, offset + 4 * k));
  }
  return p;
}

void save_model(const ClassifierParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  const std::string bytes = serialize(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io, "write failed for " + path);
}

ClassifierParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open model " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::string model_fingerprint(const ClassifierParams& params) {
  const std::string bytes = serialize(params);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes.data(), bytes.size());
  return os.str();
}

}  // namespace glyphforge
