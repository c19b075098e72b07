#include "dguide/networks.hpp"

#include <fstream>
#include <sstream>

#include "dguide/gmm.hpp"

namespace dguide {

MlpSpec base_mlp_spec() { return MlpSpec{1, {16, 64, 256, 64, 16}, 1, 256, false}; }

MlpSpec discriminator_mlp_spec() { return MlpSpec{2, {64, 32, 8}, 1, 64, true}; }

NoiseSchedule default_schedule() { return make_linear_schedule(500, 1e-4, 0.02); }

BaseNoisePredictor::BaseNoisePredictor(NetworkParams params, NoiseSchedule schedule, nlohmann::json provenance)
    : params_(std::move(params)), schedule_(std::move(schedule)), provenance_(std::move(provenance)) {
  require(params_.spec.input_dim == 1 && params_.spec.output_dim == 1, ErrorKind::Config,
          "base noise predictors map a scalar to a scalar");
  table_ = build_modulation_table(params_, schedule_.steps());
}

JointDiscriminator::JointDiscriminator(NetworkParams params, ModalitySchedules schedules, nlohmann::json provenance)
    : params_(std::move(params)), schedules_(std::move(schedules)), provenance_(std::move(provenance)) {
  require(params_.spec.input_dim == 2 && params_.spec.output_dim == 1, ErrorKind::Config,
          "the joint discriminator maps (x, y) to one logit");
  table_ = build_modulation_table(params_, schedules_.steps());
}

namespace {

void check_column(const Tensor& t, const char* what) {
  require(t.rank() == 2 && t.cols() == 1, ErrorKind::Shape, std::string(what) + " must be [batch, 1]");
}

std::vector<int> span_to_vector(std::span<const int> ts, std::int64_t rows, int max_t) {
  std::vector<int> out;
  if (ts.size() == 1)
    out.assign(static_cast<std::size_t>(rows), ts[0]);
  else
    out.assign(ts.begin(), ts.end());
  require(static_cast<std::int64_t>(out.size()) == rows, ErrorKind::Shape, "one timestep per row required");
  for (int t : out) require(t >= 1 && t <= max_t, ErrorKind::Contract, "timestep outside [1, T]");
  return out;
}

}  // namespace

Tensor predict_noise(const BaseNoisePredictor& model, const Tensor& x_t, std::span<const int> timesteps) {
  check_column(x_t, "x_t");
  const auto ts = span_to_vector(timesteps, x_t.rows(), model.schedule().steps());
  return forward(model.params(), x_t, ts, &model.modulation());
}

Tensor predict_noise(const BaseNoisePredictor& model, const Tensor& x_t, int t) {
  const int ts[1] = {t};
  return predict_noise(model, x_t, ts);
}

Var predict_noise_graph(Tape& tape, const BaseNoisePredictor& model, Var x_t, std::span<const int> timesteps) {
  require(x_t.cols() == 1, ErrorKind::Shape, "x_t must be [batch, 1]");
  const auto ts = span_to_vector(timesteps, x_t.rows(), model.schedule().steps());
  auto p = bind_parameters(tape, model.params(), false, /*skip_time_path=*/true);
  auto mod = modulation_from_table(tape, model.modulation(), ts);
  return forward_graph(model.params().spec, p, x_t, mod);
}

Matrix stack_pair(const Tensor& x, const Tensor& y) {
  check_column(x, "x_t");
  check_column(y, "y_t");
  require(x.rows() == y.rows(), ErrorKind::Shape, "x_t and y_t batch sizes differ");
  Matrix xy(x.rows(), 2);
  xy.col(0) = x.matrix().col(0);
  xy.col(1) = y.matrix().col(0);
  return xy;
}

Tensor logit(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, std::span<const int> timesteps) {
  const Tensor xy = Tensor::from_matrix(stack_pair(x_t, y_t));
  const auto ts = span_to_vector(timesteps, xy.rows(), d.schedules().steps());
  return forward(d.params(), xy, ts, &d.modulation());
}

Tensor logit(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, int t) {
  const int ts[1] = {t};
  return logit(d, x_t, y_t, ts);
}

GuidanceGradient guidance_gradient(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t,
                                   std::span<const int> timesteps) {
  const Tensor xy = Tensor::from_matrix(stack_pair(x_t, y_t));
  const auto ts = span_to_vector(timesteps, xy.rows(), d.schedules().steps());
  const Tensor g = grad_input(d.params(), xy, ts, &d.modulation());
  GuidanceGradient out{Tensor({xy.rows(), 1}), Tensor({xy.rows(), 1})};
  for (std::int64_t r = 0; r < xy.rows(); ++r) {
    out.x.at(r, 0) = g.at(r, 0);
    out.y.at(r, 0) = g.at(r, 1);
  }
  return out;
}

GuidanceGradient guidance_gradient(const JointDiscriminator& d, const Tensor& x_t, const Tensor& y_t, int t) {
  const int ts[1] = {t};
  return guidance_gradient(d, x_t, y_t, ts);
}

Var logit_graph(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, Var xy, std::span<const int> timesteps) {
  require(xy.cols() == 2, ErrorKind::Shape, "discriminator input must be [batch, 2]");
  auto mod = modulation_graph(tape, spec, p, timesteps);
  return forward_graph(spec, p, xy, mod);
}

// Checkpoints -------------------------------------------------------------------

nlohmann::json to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_channels", spec.hidden_channels},
          {"output_dim", spec.output_dim},
          {"timestep_embed_dim", spec.timestep_embed_dim},
          {"zero_init_output", spec.zero_init_output},
          {"normalization", "layernorm"},
          {"activation", "silu"},
          {"timestep_conditioning", "adaptive"}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<int>();
  s.hidden_channels = j.at("hidden_channels").get<std::vector<int>>();
  s.output_dim = j.at("output_dim").get<int>();
  s.timestep_embed_dim = j.at("timestep_embed_dim").get<int>();
  s.zero_init_output = j.value("zero_init_output", false);
  s.validate();
  return s;
}

namespace {

constexpr const char* kCheckpointMagic = "dguide-checkpoint 1";

nlohmann::json schedule_json(const NoiseSchedule& s) {
  require(s.beta_start > 0.0, ErrorKind::Config, "only linear schedules can be stored in checkpoints");
  return {{"kind", "linear"}, {"steps", s.steps()}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  require(j.at("kind").get<std::string>() == "linear", ErrorKind::Config, "unsupported schedule kind");
  return make_linear_schedule(j.at("steps").get<int>(), j.at("beta_start").get<double>(),
                              j.at("beta_end").get<double>());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  nlohmann::json schedules = nlohmann::json::array();
  for (const auto& s : ckpt.schedules) schedules.push_back(schedule_json(s));
  nlohmann::json header{{"role", ckpt.role},
                        {"architecture", to_json(ckpt.params.spec)},
                        {"schedules", schedules},
                        {"parameter_count", ckpt.params.scalar_count()},
                        {"provenance", ckpt.provenance}};
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  std::string line;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const Tensor& t = ckpt.params.tensors[i];
    out << "param " << ckpt.params.names[i] << ' ' << t.rows() << ' ' << t.cols() << '\n';
    line.clear();
    for (std::int64_t k = 0; k < t.size(); ++k) {
      if (k) line.push_back(' ');
      line += format_double(t[k]);
    }
    out << line << '\n';
  }
  out << "end\n";
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, "checkpoint '" + path + "' not found");
  std::string line;
  std::getline(in, line);
  require(line == kCheckpointMagic, ErrorKind::Config, "'" + path + "' is not a checkpoint (or has another version)");
  std::getline(in, line);
  Checkpoint ckpt;
  try {
    auto header = nlohmann::json::parse(line);
    ckpt.role = header.at("role").get<std::string>();
    ckpt.params.spec = mlp_spec_from_json(header.at("architecture"));
    for (const auto& s : header.at("schedules")) ckpt.schedules.push_back(schedule_from_json(s));
    ckpt.provenance = header.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "bad checkpoint header in '" + path + "': " + e.what());
  }

  // The layout is fixed by the architecture; names and shapes must match it.
  const NetworkParams expected = build_network(ckpt.params.spec, 0);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Config, "checkpoint '" + path + "' is truncated");
    std::istringstream head(line);
    std::string tag, name;
    std::int64_t rows = 0, cols = 0;
    head >> tag >> name >> rows >> cols;
    const Tensor& ref = expected.tensors[i];
    require(tag == "param" && name == expected.names[i] && rows == ref.rows() && cols == ref.cols(),
            ErrorKind::Config, "checkpoint '" + path + "': unexpected parameter block '" + line + "'");
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Config, "checkpoint '" + path + "' is truncated");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(rows * cols));
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto space = rest.find(' ');
      values.push_back(parse_double(rest.substr(0, space)));
      if (space == std::string_view::npos) break;
      rest.remove_prefix(space + 1);
    }
    require(static_cast<std::int64_t>(values.size()) == rows * cols, ErrorKind::Config,
            "checkpoint '" + path + "': wrong value count for " + name);
    ckpt.params.names.push_back(name);
    ckpt.params.tensors.emplace_back(std::vector<std::int64_t>{rows, cols}, std::move(values));
  }
  std::getline(in, line);
  require(line == "end", ErrorKind::Config, "checkpoint '" + path + "' has trailing data or is truncated");
  return ckpt;
}

void save_base(const BaseNoisePredictor& model, const std::string& path) {
  save_checkpoint(Checkpoint{"base", model.params(), {model.schedule()}, model.provenance()}, path);
}

BaseNoisePredictor load_base(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  require(c.role == "base" && c.schedules.size() == 1, ErrorKind::Config,
          "'" + path + "' is not a base-model checkpoint");
  return BaseNoisePredictor(std::move(c.params), std::move(c.schedules[0]), std::move(c.provenance));
}

void save_discriminator(const JointDiscriminator& d, const std::string& path) {
  save_checkpoint(Checkpoint{"discriminator", d.params(), {d.schedules().x, d.schedules().y}, d.provenance()}, path);
}

JointDiscriminator load_discriminator(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  require(c.role == "discriminator" && c.schedules.size() == 2, ErrorKind::Config,
          "'" + path + "' is not a discriminator checkpoint");
  return JointDiscriminator(std::move(c.params), ModalitySchedules(c.schedules[0], c.schedules[1]),
                            std::move(c.provenance));
}

}  // namespace dguide
