#include <charconv>
#include <fstream>
#include <sstream>

#include "mambastock/errors.hpp"
#include "mambastock/model.hpp"

namespace mambastock::model {

namespace {

constexpr std::string_view kMagic = "mambastock-checkpoint v1";

std::string hex(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double parse_hex(const std::string& token) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v,
                                   std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw DataError("checkpoint: bad number '" + token + "'");
  }
  return v;
}

void write_values(std::ostream& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << (i == 0 ? "" : " ") << hex(values[i]);
  }
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::string_view text) : in_(std::string(text)) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw DataError("checkpoint: unexpected end of file");
    return w;
  }

  void expect(std::string_view literal) {
    const std::string w = word();
    if (w != literal) {
      throw DataError("checkpoint: expected '" + std::string(literal) +
                      "', got '" + w + "'");
    }
  }

  std::uint64_t integer() {
    const std::string w = word();
    std::uint64_t v = 0;
    const auto res = std::from_chars(w.data(), w.data() + w.size(), v);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) {
      throw DataError("checkpoint: bad integer '" + w + "'");
    }
    return v;
  }

  // Reads `key=value` and returns value.
  std::string field(std::string_view key) {
    const std::string w = word();
    if (w.size() <= key.size() || w.compare(0, key.size(), key) != 0 ||
        w[key.size()] != '=') {
      throw DataError("checkpoint: expected field '" + std::string(key) +
                      "', got '" + w + "'");
    }
    return w.substr(key.size() + 1);
  }

  std::uint64_t int_field(std::string_view key) {
    const std::string v = field(key);
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw DataError("checkpoint: bad value for '" + std::string(key) + "'");
    }
    return out;
  }

  std::vector<double> values(std::size_t count) {
    std::vector<double> out(count);
    for (double& v : out) v = parse_hex(word());
    return out;
  }

 private:
  std::istringstream in_;
};

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  std::ostringstream out;
  const auto& c = params.config;
  out << kMagic << '\n';
  out << "config feature_dim=" << c.feature_dim << " state_size=" << c.state_size
      << " layer_count=" << c.layer_count << " seed=" << c.seed
      << " gated=" << (c.gated ? 1 : 0) << '\n';
  const auto& m = params.meta;
  out << "meta epochs=" << m.epochs << " lr=" << hex(m.lr)
      << " horizon=" << m.horizon << " test_size=" << m.test_size << '\n';
  out << "norm " << params.norm.mean.size() << '\n';
  write_values(out, params.norm.mean);
  write_values(out, params.norm.std);
  const auto named = parameters(params);
  out << "tensors " << named.size() << '\n';
  for (const auto& [name, tensor] : named) {
    out << "tensor " << name << ' ' << tensor->rank();
    for (std::size_t dim : tensor->shape()) out << ' ' << dim;
    out << '\n';
    write_values(out, tensor->values());
  }
  out << "end\n";
  return out.str();
}

ModelParams deserialize_checkpoint(std::string_view text) {
  Reader in(text);
  in.expect("mambastock-checkpoint");
  in.expect("v1");

  in.expect("config");
  ModelConfig config;
  config.feature_dim = in.int_field("feature_dim");
  config.state_size = in.int_field("state_size");
  config.layer_count = in.int_field("layer_count");
  config.seed = in.int_field("seed");
  config.gated = in.int_field("gated") != 0;
  config.validate();

  ModelParams params = init_params(config);

  in.expect("meta");
  params.meta.epochs = in.int_field("epochs");
  params.meta.lr = parse_hex(in.field("lr"));
  params.meta.horizon = static_cast<int>(in.int_field("horizon"));
  params.meta.test_size = in.int_field("test_size");

  in.expect("norm");
  const std::size_t norm_size = in.integer();
  params.norm.mean = in.values(norm_size);
  params.norm.std = in.values(norm_size);
  for (std::size_t f = 0; f < norm_size; ++f) {
    if (params.norm.std[f] == 0.0) params.norm.constant_features.push_back(f);
  }

  auto named = parameters(params);
  in.expect("tensors");
  const std::size_t count = in.integer();
  if (count != named.size()) {
    throw DataError("checkpoint: expected " + std::to_string(named.size()) +
                    " tensors, found " + std::to_string(count));
  }
  for (auto& [name, tensor] : named) {
    in.expect("tensor");
    in.expect(name);
    Shape shape(in.integer());
    for (auto& dim : shape) dim = in.integer();
    if (shape != tensor->shape()) {
      throw ShapeError("checkpoint: tensor " + name + " has shape " +
                       shape_to_string(shape) + ", expected " +
                       shape_to_string(tensor->shape()));
    }
    *tensor = Tensor(shape, in.values(shape_size(shape)));
  }
  in.expect("end");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << serialize_checkpoint(params);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

}  // namespace mambastock::model
