// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "mrfinn/mrfinn.hpp"

using namespace mrfinn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Desk-scale run shared by criteria 3 and 6-9.

constexpr std::uint64_t kMasterSeed = 0;
constexpr std::size_t kSweepEntries = 5000;
const std::vector<double> kSweepLevels = {15, 25, 35, 45};
constexpr int kSweepRepetitions = 25;

struct DeskRun {
  Dictionary train, val, test;
  TrainResult inn, inn_bwd;
  double seconds = 0.0;  // dictionaries + both INN trainings + noise-free evaluation
  MetricsReport inn_metrics, bwd_metrics;
};

DeskRun run_desk() {
  const auto t0 = Clock::now();
  DeskRun run;
  const auto schedule = SequenceSchedule::reference();
  const auto tuples = stratified_subsample(expand_grid(GridSpec::default_training()), kDeskTrainingEntries,
                                           derive_seed(kMasterSeed, "desk-subsample"));
  run.train = build_dictionary(tuples, schedule, kDefaultFatShiftHz, kMasterSeed);
  auto [val, test] = split_dictionary(build_dictionary(GridSpec::default_test(), schedule, kDefaultFatShiftHz, kMasterSeed),
                                      0.2, derive_seed(kMasterSeed, "split"));
  run.val = std::move(val);
  run.test = std::move(test);
  std::cerr << "desk: " << run.train.size() << " training, " << run.val.size() << " validation, "
            << run.test.size() << " test entries\n";

  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = kMasterSeed;
  auto progress = [](const char* label) {
    return [label](const TrainLogRow& r) {
      std::cerr << fmt("  %-7s epoch %2d  L_fwd %.3e  L_bwd %.3e  val R2 %.4f\n", label, r.epoch, r.loss_forward,
                       r.loss_backward, r.val_r2_mean);
    };
  };
  run.inn = train(ModelKind::inn, run.train, run.val, cfg, progress("inn"));
  run.inn_bwd = train(ModelKind::inn_bwd, run.train, run.val, cfg, progress("inn_bwd"));

  const Eigen::MatrixXd y = to_features(run.test.fingerprints);
  const Eigen::MatrixXd x = run.test.params.cast<double>();
  run.inn_metrics = metrics(x, run.inn.best.estimate(y));
  run.bwd_metrics = metrics(x, run.inn_bwd.best.estimate(y));
  run.seconds = seconds_since(t0);
  return run;
}

// ---------------------------------------------------------------------------

Outcome criterion_grid_counts() {
  const auto t0 = Clock::now();
  Outcome o{1, "grid-count reproduction"};
  const auto train_n = expand_grid(GridSpec::default_training()).size();
  const auto tuples = expand_grid(GridSpec::default_test());
  // Splitting only needs entry identities; a one-sample schedule keeps this fast.
  const auto d = build_dictionary(tuples, SequenceSchedule::constant(1, 10, 0, 10), kDefaultFatShiftHz);
  const auto [val, test] = split_dictionary(d, 0.2, derive_seed(kMasterSeed, "split"));
  o.pass = train_n == 396000 && tuples.size() == 33600 && val.size() == 6720 && test.size() == 26880;
  o.detail = fmt("train %zu (396000), test grid %zu (33600), split %ld/%ld (6720/26880)", train_n, tuples.size(),
                 static_cast<long>(val.size()), static_cast<long>(test.size()));
  o.seconds = seconds_since(t0);
  return o;
}

Outcome criterion_parameter_counts() {
  const auto t0 = Clock::now();
  Outcome o{2, "parameter-count reproduction"};
  const auto inn = InnModel::for_fingerprints(kDefaultLength, 1).parameter_count();
  const auto fcn = FcnModel::for_fingerprints(kDefaultLength, kNumParams, 1).parameter_count();
  o.pass = inn == 360824 && fcn == 197105;
  o.detail = fmt("INN %ld (360824), FCN %ld (197105)", static_cast<long>(inn), static_cast<long>(fcn));
  o.seconds = seconds_since(t0);
  return o;
}

/// Max over samples of ||round trip - input|| / ||input||, both directions.
double max_roundtrip_error(const InnModel& m, const Eigen::MatrixXd& inputs) {
  const Eigen::MatrixXd a = m.inverse(m.forward(inputs));
  const Eigen::MatrixXd b = m.forward(m.inverse(inputs));
  double worst = 0.0;
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    const double norm = inputs.col(j).norm();
    worst = std::max({worst, (a.col(j) - inputs.col(j)).norm() / norm, (b.col(j) - inputs.col(j)).norm() / norm});
  }
  return worst;
}

Outcome criterion_invertibility(const DeskRun& desk) {
  const auto t0 = Clock::now();
  Outcome o{3, "invertibility suite"};
  Rng rng(derive_seed(kMasterSeed, "invertibility"));
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd inputs(2 * kDefaultLength, 1000);
  for (Eigen::Index j = 0; j < inputs.cols(); ++j)
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) inputs(i, j) = g(rng);
  const double random_err = max_roundtrip_error(InnModel::for_fingerprints(kDefaultLength, 11), inputs);
  const double trained_err = max_roundtrip_error(std::get<InnModel>(desk.inn.best.net), inputs);
  const double secs = seconds_since(t0);
  o.pass = random_err <= 1e-9 && trained_err <= 1e-9 && secs < 60.0;
  o.detail = fmt("max rel err random-init %.2e, desk-trained %.2e (<= 1e-9); %.1f s (< 60)", random_err, trained_err,
                 secs);
  o.seconds = secs;
  return o;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  Outcome o{4, "gradient suite"};
  constexpr double kTol = 1e-4;
  Rng rng(derive_seed(kMasterSeed, "gradcheck"));
  std::normal_distribution<double> g(0.0, 1.0);
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
    return m;
  };

  InnModel inn(8, 2, 6, 5);
  {
    Eigen::VectorXd p = inn.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = 0.4 * g(rng);
    inn.set_parameters(p);
  }
  const Eigen::MatrixXd input = randn(8, 3), target = randn(8, 3);

  std::vector<std::string> parts;
  bool ok = true;
  for (Direction dir : {Direction::forward, Direction::inverse}) {
    auto eval = [&](const InnModel& m, InnCache* cache) {
      return dir == Direction::forward ? m.forward(input, cache) : m.inverse(input, cache);
    };
    auto loss = [&](const Eigen::VectorXd& theta) {
      InnModel probe = inn;
      probe.set_parameters(theta);
      return 0.5 * (eval(probe, nullptr) - target).squaredNorm();
    };
    InnCache cache;
    const Eigen::MatrixXd out = eval(inn, &cache);
    Eigen::VectorXd grads = Eigen::VectorXd::Zero(inn.parameter_count());
    inn.backward(cache, out - target, grads);
    const auto rep = nn::gradcheck(loss, inn.parameters(), grads, kTol);
    // Every subnet of every block must receive gradient in both directions.
    bool all_subnets = true;
    for (const auto& b : inn.blocks())
      for (const Subnet* s : {&b.s1, &b.t1, &b.s2, &b.t2}) {
        const auto first = s->hidden.offset;
        const auto count = s->hidden.parameter_count() + s->output.parameter_count();
        all_subnets = all_subnets && grads.segment(first, count).cwiseAbs().maxCoeff() > 0.0;
      }
    ok = ok && rep.passed && all_subnets;
    parts.push_back(fmt("INN %s %.1e%s", dir == Direction::forward ? "fwd" : "inv", rep.max_relative_error,
                        all_subnets ? "" : " (subnet without gradient)"));
  }

  FcnModel fcn(8, 6, 5, 9);
  const Eigen::MatrixXd fin = randn(8, 3), ft = randn(5, 3);
  auto floss = [&](const Eigen::VectorXd& theta) {
    FcnModel probe = fcn;
    probe.set_parameters(theta);
    return 0.5 * (probe.forward(fin) - ft).squaredNorm();
  };
  FcnCache fc;
  const Eigen::MatrixXd fout = fcn.forward(fin, &fc);
  Eigen::VectorXd fg = Eigen::VectorXd::Zero(fcn.parameter_count());
  fcn.backward(fc, fout - ft, fg);
  const auto frep = nn::gradcheck(floss, fcn.parameters(), fg, kTol);
  ok = ok && frep.passed;
  parts.push_back(fmt("FCN %.1e", frep.max_relative_error));

  const double secs = seconds_since(t0);
  o.pass = ok && secs < 60.0;
  o.detail = "max rel err " + parts[0] + ", " + parts[1] + ", " + parts[2] + fmt(" (<= 1e-4); %.1f s (< 60)", secs);
  o.seconds = secs;
  return o;
}

Outcome criterion_simulator() {
  const auto t0 = Clock::now();
  Outcome o{5, "simulator oracle"};
  const double t1 = 1000.0, tr = 10.0, alpha_deg = 10.0;
  const auto reps = static_cast<std::size_t>(10.0 * t1 / tr) + 1;
  const auto fp = simulate_pool(t1, 0.0, 1.0, SequenceSchedule::constant(reps, alpha_deg, 0.0, tr));
  const double expected = oracle::spoiled_steady_state(alpha_deg * M_PI / 180.0, tr, t1);
  const double ss_err = std::abs(std::abs(fp[static_cast<Eigen::Index>(reps - 1)]) - expected);

  const auto schedule = SequenceSchedule::reference();
  double lin_err = 0.0;
  for (double dfz : {-100.0, 0.0, 35.0}) {
    TissueParams p{0.0, 1200.0, 320.0, dfz, 0.8};
    const auto f0 = simulate_fingerprint(p, schedule);
    p.ff = 1.0;
    const auto f1 = simulate_fingerprint(p, schedule);
    p.ff = 0.5;
    const auto fh = simulate_fingerprint(p, schedule);
    for (Eigen::Index k = 0; k < fh.size(); ++k) {
      const auto mid = 0.5 * (f0[k] + f1[k]);
      lin_err = std::max(lin_err, std::abs(fh[k] - mid) / std::max(std::abs(mid), 1e-300));
    }
  }
  o.pass = ss_err <= 1e-6 && lin_err <= 1e-12;
  o.detail = fmt("steady-state abs err %.2e (<= 1e-6), FF-linearity rel err %.2e (<= 1e-12)", ss_err, lin_err);
  o.seconds = seconds_since(t0);
  return o;
}

Outcome criterion_desk_end_to_end(const DeskRun& desk) {
  Outcome o{6, "desk-scale end-to-end"};
  const double r2_ff = desk.inn_metrics.params[0].r2;
  const double mre_inn = desk.inn_metrics.params[1].mre_mean;
  const double mre_bwd = desk.bwd_metrics.params[1].mre_mean;
  o.pass = r2_ff >= 0.95 && mre_inn <= mre_bwd && desk.seconds <= 15 * 60;
  o.detail = fmt("INN R2(FF) %.4f (>= 0.95); MRE(T1H2O) INN %.3f%% vs INN_bwd %.3f%% (INN <= INN_bwd); %.0f s (<= 900)",
                 r2_ff, mre_inn, mre_bwd, desk.seconds);
  o.seconds = desk.seconds;
  return o;
}

Outcome criterion_heatmap(const DeskRun& desk) {
  const auto t0 = Clock::now();
  Outcome o{7, "heat-map direction"};
  const auto hm = heatmap_diff(desk.inn_bwd.best, desk.inn.best, desk.test, 1);
  const double mean_high_ff = hm.mean_for_ff_at_least(0.7 - 1e-6);
  o.pass = mean_high_ff > 0.0;
  o.detail = fmt("mean T1H2O cell (INN_bwd - INN) over FF >= 0.7: %+.3f pp (> 0)", mean_high_ff);
  o.seconds = seconds_since(t0);
  return o;
}

Outcome criterion_correlation(const DeskRun& desk) {
  const auto t0 = Clock::now();
  Outcome o{8, "correlation sign"};
  const auto c = fwd_bwd_correlate(desk.inn.best, desk.test);
  o.pass = c.rho < 0.0;
  o.detail = fmt("Spearman rho(MRE, inner product) = %.4f over %ld entries (< 0; reference -0.301)", c.rho,
                 static_cast<long>(c.mre.size()));
  o.seconds = seconds_since(t0);
  return o;
}

Outcome criterion_snr_sweep(const DeskRun& desk) {
  const auto t0 = Clock::now();
  Outcome o{9, "SNR-sweep monotonicity"};
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = kMasterSeed;
  const auto fcn = train(ModelKind::fcn, desk.train, desk.val, cfg);
  const Dictionary subset =
      stratified_subsample(desk.test, kSweepEntries, derive_seed(kMasterSeed, "sweep-subsample"));
  const double s_ref = signal_reference(desk.test.manifest.schedule, desk.test.manifest.fat_shift_hz);
  const auto sweeps = snr_sweep({{"inn", &desk.inn.best}, {"inn_bwd", &desk.inn_bwd.best}, {"fcn", &fcn.best}}, subset,
                                kSweepLevels, kSweepRepetitions, derive_seed(kMasterSeed, "sweep"), s_ref);
  int violations = 0;
  std::string where;
  for (const auto& s : sweeps)
    for (int p = 0; p < kNumParams; ++p)
      for (std::size_t l = 1; l < s.levels.size(); ++l)
        if (s.levels[l].mre_mean[p] > s.levels[l - 1].mre_mean[p]) {
          ++violations;
          where += fmt(" %s/%s@%gdB", s.model.c_str(), kParamNames[p], s.levels[l].snr_db);
        }
  const double secs = seconds_since(t0);
  const auto& inn = sweeps[0].levels;
  o.pass = violations == 0 && kDefaultSweepRepetitions == 100 && secs <= 600.0;
  o.detail = fmt("%d reps x %zu levels x %ld entries; INN T1H2O MRE %.2f/%.2f/%.2f/%.2f%% at 15/25/35/45 dB; "
                 "%d monotonicity violations; default reps %d (100); %.0f s (<= 600)",
                 kSweepRepetitions, kSweepLevels.size(), static_cast<long>(subset.size()), inn[0].mre_mean[1],
                 inn[1].mre_mean[1], inn[2].mre_mean[1], inn[3].mre_mean[1], violations, kDefaultSweepRepetitions,
                 secs) +
             where;
  o.seconds = secs;
  return o;
}

Outcome criterion_oracles() {
  const auto t0 = Clock::now();
  Outcome o{10, "oracle equivalence"};
  Rng rng(derive_seed(kMasterSeed, "oracle-equivalence"));
  std::uniform_int_distribution<int> size_dist(3, 100), level(0, 3);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size_dist(rng);
    Eigen::MatrixXd truth(kNumParams, n), a(kNumParams, n), b(kNumParams, n);
    std::vector<std::vector<double>> vt(n, std::vector<double>(kNumParams)), va = vt, vb = vt;
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < kNumParams; ++p) {
        // Few distinct FF/T1 values so heat-map cells collect several entries.
        const double t = p < 2 ? 0.1 + level(rng) * (p == 0 ? 0.2 : 400.0) : 1.0 + std::abs(g(rng)) * 100.0;
        truth(p, j) = vt[j][p] = t;
        a(p, j) = va[j][p] = t + g(rng) * 0.1 * t;
        b(p, j) = vb[j][p] = t + g(rng) * 0.1 * t;
      }
    const auto got = metrics(truth, a);
    const auto want = oracle::metrics(vt, va, kRelativeErrorGuard);
    for (int p = 0; p < kNumParams; ++p) {
      const auto& m = got.params[p];
      for (auto [x, y] : {std::pair{m.mae_mean, want[p].mae}, {m.mae_sd, want[p].mae_sd}, {m.mre_mean, want[p].mre},
                          {m.mre_sd, want[p].mre_sd}, {m.r2, want[p].r2}})
        worst = std::max(worst, std::abs(x - y) / std::max(1.0, std::abs(y)));
    }
    for (int param : {1, 2}) {
      const auto hm = heatmap_from_predictions(truth, a, b, param);
      const auto ref = oracle::heatmap(vt, va, vb, param);
      std::size_t populated = 0;
      for (std::size_t i = 0; i < hm.ff_values.size(); ++i)
        for (std::size_t j = 0; j < hm.t1_h2o_values.size(); ++j) {
          const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
          if (hm.counts(r, c) == 0) continue;
          ++populated;
          worst = std::max(worst, std::abs(hm.cells(r, c) - ref.at({hm.ff_values[i], hm.t1_h2o_values[j]})));
        }
      if (populated != ref.size()) worst = INFINITY;
    }
    Eigen::VectorXd sa(n), sb(n);
    std::vector<double> xa(n), xb(n);
    for (int j = 0; j < n; ++j) {
      // Rounded values produce ties.
      sa[j] = xa[j] = std::round(g(rng) * 3.0);
      sb[j] = xb[j] = g(rng);
    }
    if (sa.maxCoeff() != sa.minCoeff()) worst = std::max(worst, std::abs(spearman(sa, sb) - oracle::spearman(xa, xb)));
  }
  o.pass = worst <= 1e-12;
  o.detail = fmt("max deviation from brute force over 200 random instances: %.2e (<= 1e-12)", worst);
  o.seconds = seconds_since(t0);
  return o;
}

}  // namespace

int main() {
  std::vector<Outcome> results;
  auto report = [&](Outcome o) {
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << o.id << ". " << o.name << ": " << o.detail << std::endl;
    results.push_back(std::move(o));
  };

  report(criterion_grid_counts());
  report(criterion_parameter_counts());
  report(criterion_gradients());
  report(criterion_simulator());
  report(criterion_oracles());

  const DeskRun desk = run_desk();
  report(criterion_invertibility(desk));
  report(criterion_desk_end_to_end(desk));
  report(criterion_heatmap(desk));
  report(criterion_correlation(desk));
  report(criterion_snr_sweep(desk));

  std::sort(results.begin(), results.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  int failed = 0;
  std::cout << "\nsummary\n";
  for (const auto& o : results) {
    std::cout << fmt("  %-2d %-30s %s  (%.1f s)\n", o.id, o.name.c_str(), o.pass ? "PASS" : "FAIL", o.seconds);
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
