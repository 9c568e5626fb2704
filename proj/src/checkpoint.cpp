#include <fstream>
#include <iomanip>
#include <string>

#include "milup/error.hpp"
#include "milup/models.hpp"

namespace milup {
namespace {

constexpr const char* kMagic = "milup-checkpoint";
constexpr int kVersion = 1;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kLogistic: return "logistic";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "logistic") return Activation::kLogistic;
  if (s == "identity") return Activation::kIdentity;
  throw ParseError("checkpoint: unknown activation '" + s + "'", 0);
}

template <typename Range>
void write_values(std::ostream& out, const Range& values) {
  bool first = true;
  for (double v : values) {
    if (!first) out << ' ';
    out << v;
    first = false;
  }
  out << '\n';
}

void expect(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token) {
    throw ParseError("checkpoint: expected '" + token + "', found '" + got + "'", 0);
  }
}

template <typename T>
T read(std::istream& in, const char* what) {
  T v{};
  if (!(in >> v)) throw ParseError(std::string("checkpoint: cannot read ") + what, 0);
  return v;
}

void read_values(std::istream& in, std::span<double> dst) {
  for (double& v : dst) v = read<double>(in, "value");
}

}  // namespace

void save_checkpoint(const UpliftModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out << std::setprecision(17);
  out << kMagic << " v" << kVersion << '\n';
  out << "kind " << to_string(model.kind) << '\n';
  out << "input_dim " << model.input_dim << '\n';
  out << "seed " << model.seed << '\n';
  out << "hidden " << model.hidden_sizes.size();
  for (auto h : model.hidden_sizes) out << ' ' << h;
  out << '\n';
  out << "transform " << model.input_transform.mean.size() << '\n';
  if (!model.input_transform.empty()) {
    write_values(out, model.input_transform.mean);
    write_values(out, model.input_transform.scale);
  }
  out << "networks " << model.networks.size() << '\n';
  for (const auto& net : model.networks) {
    out << "network " << net.layers.size() << '\n';
    for (const auto& l : net.layers) {
      out << "layer " << l.in() << ' ' << l.out() << ' ' << activation_name(l.activation) << '\n';
      write_values(out, l.weight.values());
      write_values(out, l.bias);
    }
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

UpliftModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  expect(in, kMagic);
  const auto version = read<std::string>(in, "version");
  if (version != "v" + std::to_string(kVersion)) {
    throw ParseError("checkpoint: unsupported version '" + version + "'", 0);
  }
  UpliftModel m;
  expect(in, "kind");
  m.kind = parse_model_kind(read<std::string>(in, "kind"));
  expect(in, "input_dim");
  m.input_dim = read<std::size_t>(in, "input_dim");
  expect(in, "seed");
  m.seed = read<std::uint64_t>(in, "seed");
  expect(in, "hidden");
  m.hidden_sizes.resize(read<std::size_t>(in, "hidden count"));
  for (auto& h : m.hidden_sizes) h = read<std::size_t>(in, "hidden size");
  expect(in, "transform");
  if (const auto d = read<std::size_t>(in, "transform size"); d > 0) {
    m.input_transform.mean.resize(d);
    m.input_transform.scale.resize(d);
    read_values(in, m.input_transform.mean);
    read_values(in, m.input_transform.scale);
  }
  expect(in, "networks");
  m.networks.resize(read<std::size_t>(in, "network count"));
  for (auto& net : m.networks) {
    expect(in, "network");
    net.layers.resize(read<std::size_t>(in, "layer count"));
    for (auto& l : net.layers) {
      expect(in, "layer");
      const auto rows = read<std::size_t>(in, "layer input");
      const auto cols = read<std::size_t>(in, "layer output");
      l.activation = parse_activation(read<std::string>(in, "activation"));
      l.weight = Matrix(rows, cols);
      l.bias.resize(cols);
      read_values(in, l.weight.values());
      read_values(in, l.bias);
    }
  }
  // Re-derive the expected wiring and compare shapes.
  const UpliftModel reference = build_model(m.kind, m.input_dim, m.hidden_sizes, 0);
  bool ok = reference.networks.size() == m.networks.size();
  for (std::size_t k = 0; ok && k < m.networks.size(); ++k) {
    const auto& a = reference.networks[k].layers;
    const auto& b = m.networks[k].layers;
    ok = a.size() == b.size();
    for (std::size_t j = 0; ok && j < a.size(); ++j) {
      ok = a[j].in() == b[j].in() && a[j].out() == b[j].out() && a[j].activation == b[j].activation;
    }
  }
  if (!ok) throw ShapeError("checkpoint: network shapes do not match the declared architecture");
  return m;
}

}  // namespace milup
