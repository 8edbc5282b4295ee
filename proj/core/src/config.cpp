#include "umfsb/config.hpp"

#include <cmath>
#include <fstream>

#include "umfsb/error.hpp"

namespace umfsb {

namespace {

using json = nlohmann::json;

json net_json(const NetConfig& c) {
  return {{"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"activation", ad::activation_name(c.activation)},
          {"rbf_kernels", c.rbf_kernels},
          {"interaction_hidden_width", c.interaction_hidden_width},
          {"interaction_hidden_layers", c.interaction_hidden_layers},
          {"exact_divergence_max_dim", c.exact_divergence_max_dim},
          {"divergence_probes", c.divergence_probes}};
}

json eval_json(const EvalOptions& e) {
  return {{"seeds", e.seeds},
          {"base_seed", e.base_seed},
          {"moran_k", e.moran_k},
          {"w1_max_points", e.w1_max_points},
          {"moran", e.moran},
          {"threads", e.threads}};
}

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& given, const json& defaults, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown key '" + path + "." + key + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (net.hidden_width < 1 || net.hidden_layers < 1 || net.rbf_kernels < 1 ||
      net.interaction_hidden_width < 1 || net.interaction_hidden_layers < 1) {
    throw ConfigError("net: widths, layer counts and rbf_kernels must be >= 1");
  }
  if (net.divergence_probes < 1) throw ConfigError("net.divergence_probes must be >= 1");
  if (!(diffusion.sigma > 0.0)) throw ConfigError("diffusion.sigma must be positive");
  if (!(diffusion.alpha >= 0.0)) throw ConfigError("diffusion.alpha must be >= 0");
  if (!(interaction.cutoff > 0.0)) throw ConfigError("interaction.cutoff must be positive");
  if (!std::isfinite(interaction.force_max)) throw ConfigError("interaction.force_max must be finite");
  train.validate();
  if (eval.seeds < 1) throw ConfigError("eval.seeds must be >= 1");
  if (eval.moran_k < 1) throw ConfigError("eval.moran_k must be >= 1");
  if (eval.w1_max_points < 2) throw ConfigError("eval.w1_max_points must be >= 2");
  if (eval.threads < 1) throw ConfigError("eval.threads must be >= 1");
  data.validate();
}

json to_json(const RunConfig& c) {
  return {{"net", net_json(c.net)},
          {"diffusion", {{"sigma", c.diffusion.sigma}, {"alpha", c.diffusion.alpha}}},
          {"interaction",
           {{"cutoff", c.interaction.cutoff},
            {"force_max", c.interaction.force_max},
            {"use_weights", c.interaction.use_weights}}},
          {"train", to_json(c.train)},
          {"eval", eval_json(c.eval)},
          {"data", to_json(c.data)},
          {"standardize", c.standardize}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  const json defaults = to_json(c);
  reject_unknown(j, defaults, "config");
  try {
    if (j.contains("net")) {
      const json& n = j.at("net");
      reject_unknown(n, defaults.at("net"), "config.net");
      read(n, "hidden_width", c.net.hidden_width);
      read(n, "hidden_layers", c.net.hidden_layers);
      if (n.contains("activation")) {
        c.net.activation = ad::activation_from_name(n.at("activation").get<std::string>());
      }
      read(n, "rbf_kernels", c.net.rbf_kernels);
      read(n, "interaction_hidden_width", c.net.interaction_hidden_width);
      read(n, "interaction_hidden_layers", c.net.interaction_hidden_layers);
      read(n, "exact_divergence_max_dim", c.net.exact_divergence_max_dim);
      read(n, "divergence_probes", c.net.divergence_probes);
    }
    if (j.contains("diffusion")) {
      const json& d = j.at("diffusion");
      reject_unknown(d, defaults.at("diffusion"), "config.diffusion");
      read(d, "sigma", c.diffusion.sigma);
      read(d, "alpha", c.diffusion.alpha);
    }
    if (j.contains("interaction")) {
      const json& i = j.at("interaction");
      reject_unknown(i, defaults.at("interaction"), "config.interaction");
      read(i, "cutoff", c.interaction.cutoff);
      read(i, "force_max", c.interaction.force_max);
      read(i, "use_weights", c.interaction.use_weights);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, defaults.at("eval"), "config.eval");
      read(e, "seeds", c.eval.seeds);
      read(e, "base_seed", c.eval.base_seed);
      read(e, "moran_k", c.eval.moran_k);
      read(e, "w1_max_points", c.eval.w1_max_points);
      read(e, "moran", c.eval.moran);
      read(e, "threads", c.eval.threads);
    }
    read(j, "standardize", c.standardize);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) c.data = synth_params_from_json(j.at("data"));
  c.eval.integrator = c.train.integrator;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

Standardization Standardization::identity(int dim) {
  return {Matrix::Zero(1, dim), Matrix::Ones(1, dim)};
}

Standardization Standardization::fit(const SnapshotDataset& data) {
  data.validate();
  const int d = data.dim();
  Matrix sum = Matrix::Zero(1, d), sq = Matrix::Zero(1, d);
  double n = 0.0;
  for (const auto& c : data.clouds) {
    sum += c.colwise().sum();
    n += static_cast<double>(c.rows());
  }
  const Matrix mean = sum / n;
  for (const auto& c : data.clouds) sq += (c.rowwise() - mean.row(0)).array().square().matrix().colwise().sum();
  Matrix scale = (sq / n).array().sqrt().matrix();
  for (Index j = 0; j < d; ++j) {
    if (!(scale(0, j) > 0.0)) scale(0, j) = 1.0;  // constant coordinate: shift only
  }
  return {mean, scale};
}

Matrix Standardization::apply(const Matrix& x) const {
  if (x.cols() != mean.cols()) {
    throw DataError("standardization: data has " + std::to_string(x.cols()) + " columns, expected " +
                    std::to_string(mean.cols()));
  }
  return ((x.rowwise() - mean.row(0)).array().rowwise() / scale.row(0).array()).matrix();
}

Matrix Standardization::invert(const Matrix& z) const {
  return ((z.array().rowwise() * scale.row(0).array()).rowwise() + mean.row(0).array()).matrix();
}

SnapshotDataset Standardization::apply(const SnapshotDataset& data) const {
  SnapshotDataset out = data;
  for (auto& c : out.clouds) c = apply(c);
  return out;
}

json to_json(const Standardization& s) {
  std::vector<double> mean(s.mean.data(), s.mean.data() + s.mean.size());
  std::vector<double> scale(s.scale.data(), s.scale.data() + s.scale.size());
  return {{"mean", mean}, {"scale", scale}};
}

Standardization standardization_from_json(const json& j) {
  try {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    if (mean.empty() || mean.size() != scale.size()) {
      throw DataError("standardization: mean and scale must be non-empty and of equal length");
    }
    Standardization s = Standardization::identity(static_cast<int>(mean.size()));
    for (std::size_t k = 0; k < mean.size(); ++k) {
      if (!(scale[k] > 0.0)) throw DataError("standardization: scale must be positive");
      s.mean(0, static_cast<Index>(k)) = mean[k];
      s.scale(0, static_cast<Index>(k)) = scale[k];
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("standardization: ") + e.what());
  }
}

}  // namespace umfsb
