#include "umfsb/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "umfsb/error.hpp"

namespace umfsb {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Index rows, Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw DataError("checkpoint: '" + what + "' expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw DataError("checkpoint: '" + what + "' row " + std::to_string(i) + " expected " +
                      std::to_string(cols) + " entries");
    }
    for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json net_config_to_json(const NetConfig& c) {
  return {{"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"activation", ad::activation_name(c.activation)},
          {"rbf_kernels", c.rbf_kernels},
          {"interaction_hidden_width", c.interaction_hidden_width},
          {"interaction_hidden_layers", c.interaction_hidden_layers},
          {"exact_divergence_max_dim", c.exact_divergence_max_dim},
          {"divergence_probes", c.divergence_probes}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  c.hidden_width = j.at("hidden_width").get<int>();
  c.hidden_layers = j.at("hidden_layers").get<int>();
  c.activation = ad::activation_from_name(j.at("activation").get<std::string>());
  c.rbf_kernels = j.at("rbf_kernels").get<int>();
  c.interaction_hidden_width = j.at("interaction_hidden_width").get<int>();
  c.interaction_hidden_layers = j.at("interaction_hidden_layers").get<int>();
  c.exact_divergence_max_dim = j.at("exact_divergence_max_dim").get<int>();
  c.divergence_probes = j.at("divergence_probes").get<int>();
  return c;
}

}  // namespace

json mlp_to_json(const ad::Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    layers.push_back({{"weight", matrix_to_json(net.weights()[l].value())},
                      {"bias", matrix_to_json(net.biases()[l].value())}});
  }
  return {{"name", net.name()},
          {"layer_dims", net.layer_dims()},
          {"activation", ad::activation_name(net.activation())},
          {"layers", std::move(layers)}};
}

ad::Mlp mlp_from_json(const json& j) {
  const auto dims = j.at("layer_dims").get<std::vector<int>>();
  const auto name = j.at("name").get<std::string>();
  std::mt19937_64 unused(0);
  ad::Mlp net(dims, ad::activation_from_name(j.at("activation").get<std::string>()), unused, name);
  const json& layers = j.at("layers");
  if (!layers.is_array() || layers.size() + 1 != dims.size()) {
    throw DataError("checkpoint: net '" + name + "' layer count does not match layer_dims");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string tag = name + ".layer" + std::to_string(l);
    net.weights()[l].mutable_value() =
        matrix_from_json(layers[l].at("weight"), dims[l], dims[l + 1], tag + ".weight");
    net.biases()[l].mutable_value() = matrix_from_json(layers[l].at("bias"), 1, dims[l + 1], tag + ".bias");
  }
  return net;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  const ModelBundle& m = ckpt.model;
  auto v = std::dynamic_pointer_cast<MlpVectorField>(m.velocity);
  auto g = std::dynamic_pointer_cast<MlpScalarField>(m.growth);
  auto s = std::dynamic_pointer_cast<MlpScalarField>(m.score);
  auto phi = std::dynamic_pointer_cast<RbfPotential>(m.potential);
  if (!v || !g || !s || !phi) throw InvalidArgument("checkpoint: only learned bundles can be saved");
  json j;
  j["format"] = "umfsb-checkpoint";
  j["version"] = 1;
  j["stage"] = ckpt.stage;
  j["dim"] = m.dim;
  j["seed"] = m.seed;
  j["diffusion"] = {{"sigma", m.diffusion.sigma}, {"alpha", m.diffusion.alpha}, {"psi", "g^2"}};
  j["interaction"] = {{"cutoff", m.interaction.cutoff},
                      {"force_max", m.interaction.force_max},
                      {"use_weights", m.interaction.use_weights},
                      {"enabled", m.interaction_enabled}};
  j["growth_enabled"] = m.growth_enabled;
  j["net_config"] = net_config_to_json(m.net_config);
  j["nets"] = {{"velocity", mlp_to_json(v->net())},
               {"growth", mlp_to_json(g->net())},
               {"score", mlp_to_json(s->net())},
               {"interaction", mlp_to_json(phi->net())}};
  j["rbf"] = {{"centers", phi->centers()}, {"widths", phi->widths()}};
  j["config"] = ckpt.config;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", "") != "umfsb-checkpoint") throw DataError("checkpoint: unknown format");
    Checkpoint c;
    ModelBundle& m = c.model;
    c.stage = j.at("stage").get<std::string>();
    m.dim = j.at("dim").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.diffusion.sigma = j.at("diffusion").at("sigma").get<double>();
    m.diffusion.alpha = j.at("diffusion").at("alpha").get<double>();
    const json& inter = j.at("interaction");
    m.interaction.cutoff = inter.at("cutoff").get<double>();
    m.interaction.force_max = inter.at("force_max").get<double>();
    m.interaction.use_weights = inter.at("use_weights").get<bool>();
    m.interaction_enabled = inter.at("enabled").get<bool>();
    m.growth_enabled = j.at("growth_enabled").get<bool>();
    m.net_config = net_config_from_json(j.at("net_config"));
    const json& nets = j.at("nets");
    m.velocity = std::make_shared<MlpVectorField>(mlp_from_json(nets.at("velocity")), m.net_config);
    m.growth = std::make_shared<MlpScalarField>(mlp_from_json(nets.at("growth")));
    m.score = std::make_shared<MlpScalarField>(mlp_from_json(nets.at("score")));
    m.potential = std::make_shared<RbfPotential>(j.at("rbf").at("centers").get<std::vector<double>>(),
                                                 j.at("rbf").at("widths").get<std::vector<double>>(),
                                                 mlp_from_json(nets.at("interaction")));
    const int in = m.dim + 1;
    for (const auto* key : {"velocity", "growth", "score"}) {
      if (nets.at(key).at("layer_dims").front().get<int>() != in) {
        throw DataError(std::string("checkpoint: net '") + key + "' input width does not match dim " +
                        std::to_string(m.dim));
      }
    }
    c.config = j.value("config", json::object());
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << checkpoint_to_json(ckpt).dump(1) << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint '" + path + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace umfsb
