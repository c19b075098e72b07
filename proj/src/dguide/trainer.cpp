#include "dguide/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "dguide/gmm.hpp"
#include "dguide/sampler.hpp"

namespace dguide {

void TrainConfig::validate() const {
  require(adam.learning_rate > 0.0, ErrorKind::Config, "learning rate must be positive");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, ErrorKind::Config,
          "Adam moment decays must lie in [0, 1)");
  require(adam.epsilon > 0.0, ErrorKind::Config, "Adam epsilon must be positive");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be at least 1");
  require(max_steps >= 1, ErrorKind::Config, "max_steps must be at least 1");
  require(early_stop_window >= 0, ErrorKind::Config, "early_stop_window must be non-negative");
  require(early_stop_tolerance >= 0.0, ErrorKind::Config, "early_stop_tolerance must be non-negative");
  require(ema_decay >= 0.0 && ema_decay < 1.0, ErrorKind::Config, "ema_decay must lie in [0, 1)");
  require(w_disc >= 0.0 && w_denoise >= 0.0, ErrorKind::Config, "loss weights must be non-negative");
  require(w_disc > 0.0 || w_denoise > 0.0, ErrorKind::Config, "loss weights (0, 0) leave nothing to train");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.adam.learning_rate},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"epsilon", cfg.adam.epsilon},
          {"batch_size", cfg.batch_size},
          {"max_steps", cfg.max_steps},
          {"early_stop_window", cfg.early_stop_window},
          {"early_stop_tolerance", cfg.early_stop_tolerance},
          {"w_disc", cfg.w_disc},
          {"w_denoise", cfg.w_denoise},
          {"ema_decay", cfg.ema_decay},
          {"cosine_lr", cfg.cosine_lr},
          {"seed", cfg.seed},
          {"init_seed", cfg.init_seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig d) {
  try {
    d.adam.learning_rate = j.value("learning_rate", d.adam.learning_rate);
    d.adam.beta1 = j.value("beta1", d.adam.beta1);
    d.adam.beta2 = j.value("beta2", d.adam.beta2);
    d.adam.epsilon = j.value("epsilon", d.adam.epsilon);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.max_steps = j.value("max_steps", d.max_steps);
    d.early_stop_window = j.value("early_stop_window", d.early_stop_window);
    d.early_stop_tolerance = j.value("early_stop_tolerance", d.early_stop_tolerance);
    d.w_disc = j.value("w_disc", d.w_disc);
    d.w_denoise = j.value("w_denoise", d.w_denoise);
    d.ema_decay = j.value("ema_decay", d.ema_decay);
    d.cosine_lr = j.value("cosine_lr", d.cosine_lr);
    d.seed = j.value("seed", d.seed);
    d.init_seed = j.value("init_seed", d.init_seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("bad training config: ") + e.what());
  }
  d.validate();
  return d;
}

void write_loss_log(const std::vector<LossRecord>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << "step,disc,denoise,total\n";
  for (const auto& r : log)
    out << r.step << ',' << format_double(r.disc) << ',' << format_double(r.denoise) << ',' << format_double(r.total)
        << '\n';
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

Adam::Adam(const NetworkParams& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& t : params.tensors) {
    m_.emplace_back(t.shape());
    v_.emplace_back(t.shape());
  }
}

void Adam::step(NetworkParams& params, const std::vector<Tensor>& grads) {
  require(grads.size() == params.size(), ErrorKind::Shape, "one gradient per parameter tensor required");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(grads[k].shape() == params.tensors[k].shape(), ErrorKind::Shape, "gradient shape mismatch");
    auto w = params.tensors[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
    }
  }
}

double learning_rate_at(const TrainConfig& cfg, int step) {
  if (!cfg.cosine_lr) return cfg.adam.learning_rate;
  return cfg.adam.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - 1) / cfg.max_steps));
}

bool should_stop_early(const std::vector<LossRecord>& log, int window, double tolerance) {
  if (window <= 0) return false;
  const auto w = static_cast<std::size_t>(window);
  if (log.size() < 2 * w) return false;
  auto mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + w; ++i) s += log[i].total;
    return s / static_cast<double>(w);
  };
  const double previous = mean(log.size() - 2 * w);
  const double last = mean(log.size() - w);
  return (previous - last) < tolerance * std::abs(previous);
}

namespace {

void ema_update(NetworkParams& avg, const NetworkParams& p, double decay) {
  for (std::size_t k = 0; k < p.size(); ++k)
    avg.tensors[k].matrix() = decay * avg.tensors[k].matrix() + (1.0 - decay) * p.tensors[k].matrix();
}

void check_loss(double value, int step) {
  require(std::isfinite(value), ErrorKind::Numeric,
          "training diverged: loss is " + std::to_string(value) + " at step " + std::to_string(step));
}

std::vector<Tensor> to_tensors(const std::vector<Var>& grads) {
  std::vector<Tensor> out;
  out.reserve(grads.size());
  for (const Var& g : grads) {
    require(all_finite(g.value()), ErrorKind::Numeric, "parameter gradient is not finite");
    out.push_back(Tensor::from_matrix(g.value()));
  }
  return out;
}

Tensor column(const Matrix& m, Eigen::Index c) {
  Tensor out({m.rows(), 1});
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r] = m(r, c);
  return out;
}

}  // namespace

BaseTraining train_base(const Tensor& dataset, const TrainConfig& cfg, const NoiseSchedule& schedule,
                        const MlpSpec& spec) {
  cfg.validate();
  require(dataset.rank() == 2 && dataset.cols() == 1 && dataset.rows() >= 1, ErrorKind::Shape,
          "base training needs a 1-D dataset [n, 1]");
  require(spec.input_dim == 1 && spec.output_dim == 1, ErrorKind::Config, "base networks map a scalar to a scalar");
  NetworkParams params = build_network(spec, cfg.init_seed);
  NetworkParams average = params;
  Adam adam(params, cfg.adam);
  std::vector<LossRecord> log;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    RandomStream index_rng(cfg.seed, "base/index", static_cast<std::uint64_t>(step));
    RandomStream noise_rng(cfg.seed, "base/noise", static_cast<std::uint64_t>(step));
    Tensor batch({cfg.batch_size, 1});
    for (int i = 0; i < cfg.batch_size; ++i) batch[i] = dataset[index_rng.uniform_int(0, dataset.rows() - 1)];

    Tape tape;
    const auto p = bind_parameters(tape, params, true);
    const NoisePredictor predict = [&](Tape& tp, Var x_t, std::span<const int> ts) {
      return forward_graph(spec, p, x_t, modulation_graph(tp, spec, p, ts));
    };
    Var loss = denoising_loss(tape, predict, batch, schedule, noise_rng);
    const double value = loss.value()(0, 0);
    check_loss(value, step);
    adam.set_learning_rate(learning_rate_at(cfg, step));
    adam.step(params, to_tensors(tape.gradients(loss, p)));
    if (cfg.ema_decay > 0.0) ema_update(average, params, cfg.ema_decay);
    log.push_back({step, 0.0, value, value});
    if (should_stop_early(log, cfg.early_stop_window, cfg.early_stop_tolerance)) break;
  }
  nlohmann::json provenance{{"seed", cfg.seed},
                            {"train_config", to_json(cfg)},
                            {"loss", "denoising"},
                            {"steps_run", log.size()},
                            {"dataset_rows", dataset.rows()}};
  if (cfg.ema_decay > 0.0) params = std::move(average);
  return {BaseNoisePredictor(std::move(params), schedule, std::move(provenance)), std::move(log)};
}

FakePairStore generate_fake_pool(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y, std::int64_t n,
                                 std::uint64_t seed) {
  require(n >= 1, ErrorKind::Config, "fake pool size must be at least 1");
  return {sample_unguided(base_x, n, seed, "fake/x"), sample_unguided(base_y, n, seed, "fake/y"), seed};
}

namespace {
constexpr const char* kFakePoolMagic = "# dguide-fake-pool v1";
}  // namespace

void save_fake_pool(const FakePairStore& pool, const std::string& path) {
  require(pool.x_pool.rows() == pool.y_pool.rows(), ErrorKind::Shape, "fake pools must have equal sizes");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << kFakePoolMagic << '\n'
      << "# " << nlohmann::json{{"seed", pool.seed}, {"n", pool.x_pool.rows()}}.dump() << '\n';
  for (std::int64_t i = 0; i < pool.x_pool.rows(); ++i)
    out << format_double(pool.x_pool[i]) << ',' << format_double(pool.y_pool[i]) << '\n';
  require(out.good(), ErrorKind::Io, "failed writing '" + path + "'");
}

FakePairStore load_fake_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, "fake pool '" + path + "' not found");
  std::string line;
  std::getline(in, line);
  require(line == kFakePoolMagic, ErrorKind::Config, "'" + path + "' is not a fake-pool file");
  std::getline(in, line);
  require(line.rfind("# ", 0) == 0, ErrorKind::Config, "fake-pool header missing in '" + path + "'");
  FakePairStore pool;
  std::int64_t n = 0;
  try {
    const auto header = nlohmann::json::parse(line.substr(2));
    pool.seed = header.at("seed").get<std::uint64_t>();
    n = header.at("n").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "bad fake-pool header in '" + path + "': " + e.what());
  }
  require(n >= 1, ErrorKind::Config, "fake pool is empty");
  std::vector<double> xs, ys;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorKind::Config, "fake-pool row needs two values");
    xs.push_back(parse_double(std::string_view(line).substr(0, comma)));
    ys.push_back(parse_double(std::string_view(line).substr(comma + 1)));
  }
  require(static_cast<std::int64_t>(xs.size()) == n, ErrorKind::Config, "fake-pool row count differs from header");
  pool.x_pool = Tensor({n, 1}, std::move(xs));
  pool.y_pool = Tensor({n, 1}, std::move(ys));
  return pool;
}

NoisedBatch noise_pairs(const Matrix& xy0, const ModalitySchedules& s, RandomStream& rng) {
  require(xy0.cols() == 2 && xy0.rows() >= 1, ErrorKind::Shape, "pairs must be [n, 2]");
  NoisedBatch b{Matrix(xy0.rows(), 2), Matrix(xy0.rows(), 2), std::vector<int>(static_cast<std::size_t>(xy0.rows()))};
  for (Eigen::Index r = 0; r < xy0.rows(); ++r) {
    const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
    b.t[static_cast<std::size_t>(r)] = t;
    b.eps(r, 0) = rng.normal();
    b.eps(r, 1) = rng.normal();
    const double ax = s.x.alpha_bar(t), ay = s.y.alpha_bar(t);
    b.xy_t(r, 0) = std::sqrt(ax) * xy0(r, 0) + std::sqrt(1.0 - ax) * b.eps(r, 0);
    b.xy_t(r, 1) = std::sqrt(ay) * xy0(r, 1) + std::sqrt(1.0 - ay) * b.eps(r, 1);
  }
  return b;
}

Matrix draw_real_batch(const Tensor& paired, int batch, RandomStream& rng) {
  require(paired.rank() == 2 && paired.cols() == 2 && paired.rows() >= 1, ErrorKind::Shape,
          "paired data must be [n, 2]");
  Matrix out(batch, 2);
  for (int i = 0; i < batch; ++i) {
    const auto k = rng.uniform_int(0, paired.rows() - 1);
    out(i, 0) = paired.at(k, 0);
    out(i, 1) = paired.at(k, 1);
  }
  return out;
}

Matrix draw_fake_batch(const FakePairStore& pool, int batch, RandomStream& rng) {
  require(pool.x_pool.rows() >= 1 && pool.y_pool.rows() >= 1, ErrorKind::Shape, "fake pools are empty");
  Matrix out(batch, 2);
  for (int i = 0; i < batch; ++i) {
    out(i, 0) = pool.x_pool[rng.uniform_int(0, pool.x_pool.rows() - 1)];
    out(i, 1) = pool.y_pool[rng.uniform_int(0, pool.y_pool.rows() - 1)];
  }
  return out;
}

Var disc_loss(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, const NoisedBatch& real,
              const NoisedBatch& fake) {
  Var h_real = logit_graph(tape, spec, p, tape.constant(real.xy_t), real.t);
  Var h_fake = logit_graph(tape, spec, p, tape.constant(fake.xy_t), fake.t);
  const double n = static_cast<double>(real.xy_t.rows() + fake.xy_t.rows());
  return scale(add(sum_all(softplus(scale(h_real, -1.0))), sum_all(softplus(h_fake))), 1.0 / n);
}

namespace {

struct DenoiseTerms {
  Matrix residual;     // eps - eps_base, [n, 2]
  Matrix coefficient;  // sqrt(1 - abar_t) per modality, [n, 2]
};

DenoiseTerms denoise_terms(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y,
                           const NoisedBatch& real, const ModalitySchedules& s) {
  const Tensor ex = predict_noise(base_x, column(real.xy_t, 0), real.t);
  const Tensor ey = predict_noise(base_y, column(real.xy_t, 1), real.t);
  DenoiseTerms d{Matrix(real.xy_t.rows(), 2), Matrix(real.xy_t.rows(), 2)};
  for (Eigen::Index r = 0; r < real.xy_t.rows(); ++r) {
    const int t = real.t[static_cast<std::size_t>(r)];
    d.residual(r, 0) = real.eps(r, 0) - ex[r];
    d.residual(r, 1) = real.eps(r, 1) - ey[r];
    d.coefficient(r, 0) = std::sqrt(1.0 - s.x.alpha_bar(t));
    d.coefficient(r, 1) = std::sqrt(1.0 - s.y.alpha_bar(t));
  }
  return d;
}

}  // namespace

Var denoise_loss(Tape& tape, const MlpSpec& spec, const std::vector<Var>& p, const BaseNoisePredictor& base_x,
                 const BaseNoisePredictor& base_y, const NoisedBatch& real, const ModalitySchedules& s) {
  DenoiseTerms d = denoise_terms(base_x, base_y, real, s);
  Var xy = tape.variable(real.xy_t);
  Var h = logit_graph(tape, spec, p, xy, real.t);
  const Var wrt[1] = {xy};
  Var g = tape.gradients(sum_all(h), wrt, /*create_graph=*/true)[0];
  Var r = add(tape.constant(std::move(d.residual)), mul(g, tape.constant(std::move(d.coefficient))));
  return scale(sum_all(mul(r, r)), 1.0 / static_cast<double>(real.xy_t.rows()));
}

double disc_loss_value(const NetworkParams& params, const NoisedBatch& real, const NoisedBatch& fake) {
  auto softplus = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };
  const Tensor hr = forward(params, Tensor::from_matrix(real.xy_t), real.t);
  const Tensor hf = forward(params, Tensor::from_matrix(fake.xy_t), fake.t);
  double total = 0.0;
  for (std::int64_t i = 0; i < hr.size(); ++i) total += softplus(-hr[i]);
  for (std::int64_t i = 0; i < hf.size(); ++i) total += softplus(hf[i]);
  return total / static_cast<double>(hr.size() + hf.size());
}

double denoise_loss_value(const NetworkParams& params, const BaseNoisePredictor& base_x,
                          const BaseNoisePredictor& base_y, const NoisedBatch& real, const ModalitySchedules& s) {
  const DenoiseTerms d = denoise_terms(base_x, base_y, real, s);
  const Tensor g = grad_input(params, Tensor::from_matrix(real.xy_t), real.t);
  const Matrix r = d.residual + g.matrix().cwiseProduct(d.coefficient);
  return r.squaredNorm() / static_cast<double>(real.xy_t.rows());
}

DiscriminatorTraining train_discriminator(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y,
                                          const Tensor& paired, const FakePairStore& fakes, const TrainConfig& cfg,
                                          const MlpSpec& spec) {
  const FakeSource source = [&fakes](int batch, RandomStream& rng) { return draw_fake_batch(fakes, batch, rng); };
  DiscriminatorTraining out = train_discriminator_with(base_x, base_y, paired, source, cfg, spec);
  nlohmann::json prov = out.disc.provenance();
  prov["fake_pool_seed"] = fakes.seed;
  prov["fake_pool_size"] = fakes.x_pool.rows();
  return {JointDiscriminator(out.disc.params(), out.disc.schedules(), std::move(prov)), std::move(out.log)};
}

DiscriminatorTraining train_discriminator_with(const BaseNoisePredictor& base_x, const BaseNoisePredictor& base_y,
                                               const Tensor& paired, const FakeSource& fakes,
                                               const TrainConfig& cfg, const MlpSpec& spec) {
  cfg.validate();
  require(spec.input_dim == 2 && spec.output_dim == 1, ErrorKind::Config,
          "the discriminator maps (x, y) to one logit");
  const ModalitySchedules schedules(base_x.schedule(), base_y.schedule());
  NetworkParams params = build_network(spec, cfg.init_seed);
  NetworkParams average = params;
  Adam adam(params, cfg.adam);
  std::vector<LossRecord> log;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto k = static_cast<std::uint64_t>(step);
    RandomStream real_index(cfg.seed, "real/index", k), real_noise(cfg.seed, "real/noise", k);
    RandomStream fake_pairing(cfg.seed, "fake/pairing", k), fake_noise(cfg.seed, "fake/noise", k);
    const NoisedBatch real = noise_pairs(draw_real_batch(paired, cfg.batch_size, real_index), schedules, real_noise);
    const Matrix fake0 = fakes(cfg.batch_size, fake_pairing);
    require(fake0.rows() == cfg.batch_size && fake0.cols() == 2, ErrorKind::Shape, "fake source returned bad shape");
    const NoisedBatch fake = noise_pairs(fake0, schedules, fake_noise);

    Tape tape;
    const auto p = bind_parameters(tape, params, true);
    LossRecord rec{step, 0.0, 0.0, 0.0};
    Var total;
    if (cfg.w_disc > 0.0) {
      Var ld = disc_loss(tape, spec, p, real, fake);
      rec.disc = ld.value()(0, 0);
      total = scale(ld, cfg.w_disc);
    } else {
      rec.disc = disc_loss_value(params, real, fake);
    }
    if (cfg.w_denoise > 0.0) {
      Var ln = denoise_loss(tape, spec, p, base_x, base_y, real, schedules);
      rec.denoise = ln.value()(0, 0);
      Var term = scale(ln, cfg.w_denoise);
      total = total.valid() ? add(total, term) : term;
    } else {
      rec.denoise = denoise_loss_value(params, base_x, base_y, real, schedules);
    }
    rec.total = total.value()(0, 0);
    check_loss(rec.total, step);
    adam.set_learning_rate(learning_rate_at(cfg, step));
    adam.step(params, to_tensors(tape.gradients(total, p)));
    if (cfg.ema_decay > 0.0) ema_update(average, params, cfg.ema_decay);
    log.push_back(rec);
    if (should_stop_early(log, cfg.early_stop_window, cfg.early_stop_tolerance)) break;
  }
  nlohmann::json provenance{{"seed", cfg.seed},
                            {"train_config", to_json(cfg)},
                            {"loss_weights", {{"disc", cfg.w_disc}, {"denoise", cfg.w_denoise}}},
                            {"steps_run", log.size()},
                            {"paired_rows", paired.rows()}};
  if (cfg.ema_decay > 0.0) params = std::move(average);
  return {JointDiscriminator(std::move(params), schedules, std::move(provenance)), std::move(log)};
}

}  // namespace dguide
