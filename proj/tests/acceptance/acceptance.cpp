// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [N ...]
//
// With no numbers every criterion runs. Criterion 6 reuses the generator
// trained by criterion 5 and runs it first when needed.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jacobi.hpp"
#include "matchinggan/ablation.hpp"
#include "matchinggan/evaluation.hpp"
#include "matchinggan/training.hpp"

namespace fs = std::filesystem;
using namespace mgan;
using ag::Var;
using ops::NormMode;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path g_work;

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs the CLI inside `dir`; output goes to dir/<log>.
bool cli(const fs::path& dir, const std::string& args, const std::string& log) {
  fs::create_directories(dir);
  const std::string cmd = "cd " + quote(dir.string()) + " && " + quote(MATCHINGGAN_CLI) + " " + args + " > " +
                          quote((dir / log).string()) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::cerr << "command failed (" << rc << "): " << cmd << "\n";
    std::ifstream in(dir / log);
    std::cerr << in.rdbuf() << "\n";
  }
  return rc == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

const fs::path kConfigs = MATCHINGGAN_CONFIGS;

// ---------------------------------------------------------------- 1

Outcome closed_forms() {
  using V = std::vector<double>;
  struct Case {
    const char* name;
    double got, want;
  };
  std::vector<Case> cases;
  cases.push_back({"hinge all-satisfied", hinge_d_loss(V{-1, -1}, V{1, 1, 1}), 0.0});
  cases.push_back({"hinge zero scores", hinge_d_loss(V{0}, V{0}), 2.0});
  cases.push_back({"hinge wrong side", hinge_d_loss(V{3}, V{-2}), 7.0});
  {
    auto f = Var<float>::constant(Tensor<float>({1, 1}, 3.0f));
    auto r = Var<float>::constant(Tensor<float>({1, 1}, -2.0f));
    cases.push_back({"hinge tensor form", hinge_d_loss(f, r).item(), 7.0});
  }

  auto wrl = [](const Tensor<double>& s, const Tensor<double>& c, const Tensor<double>& g) {
    return weighted_reconstruction_loss(Var<double>::constant(s), Var<double>::constant(c), Var<double>::constant(g))
        .item();
  };
  cases.push_back({"reconstruction identical", wrl(Tensor<double>({1, 2}, V{0.6, 0.4}), Tensor<double>({2, 1, 2, 2}, 0.3),
                                                   Tensor<double>({1, 1, 2, 2}, 0.3)),
                   0.0});
  cases.push_back({"reconstruction half", wrl(Tensor<double>({1, 1}, 1.0), Tensor<double>({1, 1, 4, 4}),
                                              Tensor<double>({1, 1, 4, 4}, 0.5)),
                   0.5});
  {
    Tensor<double> c({2, 1, 2, 2});
    for (int j = 0; j < 4; ++j) c[4 + j] = 1.0;
    cases.push_back({"reconstruction weighted", wrl(Tensor<double>({1, 2}, V{0.75, 0.25}), c, Tensor<double>({1, 1, 2, 2})),
                     0.25});
  }

  cases.push_back({"feature matching exact", feature_matching_loss(V{0.3, 0.7}, {{1, 2}, {3, 4}}, V{2.4, 3.4}), 0.0});
  cases.push_back({"feature matching unit", feature_matching_loss(V{1.0}, {{1, 1, 1, 1}}, V{0, 0, 0, 0}), 1.0});
  cases.push_back({"feature matching midpoint", feature_matching_loss(V{0.5, 0.5}, {{0, 0, 0}, {2, 2, 2}}, V{1, 1, 1}), 0.0});

  cases.push_back({"cross-entropy uniform", classification_loss(V{0.2, 0.2, 0.2, 0.2}, 1), std::log(4.0)});

  const double e = std::exp(1.0);
  const auto two = similarity_scores(V{1, 0}, {{2, 0}, {0, 3}});
  cases.push_back({"softmax first", two[0], e / (e + 1)});
  cases.push_back({"softmax second", two[1], 1 / (e + 1)});

  auto stats = [](double mu, double var) {
    GaussianStats s;
    s.mean = Eigen::VectorXd::Constant(1, mu);
    s.covariance = Eigen::MatrixXd::Constant(1, 1, var);
    return s;
  };
  cases.push_back({"frechet same", frechet_distance(stats(0, 1), stats(0, 1)), 0.0});
  cases.push_back({"frechet shifted", frechet_distance(stats(0, 1), stats(1, 1)), 1.0});
  cases.push_back({"frechet scaled", frechet_distance(stats(2, 4), stats(2, 1)), 1.0});

  Eigen::MatrixXd same(3, 2);
  same << 0.3, 0.7, 0.3, 0.7, 0.3, 0.7;
  Eigen::MatrixXd onehot(2, 2);
  onehot << 1, 0, 0, 1;
  cases.push_back({"IS identical posteriors", inception_score(same), 1.0});
  cases.push_back({"IS one-hot", inception_score(onehot), 2.0});

  double worst = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double err = std::abs(c.got - c.want);
    if (err >= worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  return {worst <= 1e-6, std::to_string(cases.size()) + " examples, worst |error| " + fmt("%.2e", worst) + " (" +
                             worst_name + ")"};
}

// ---------------------------------------------------------------- 2

GeneratorConfig tiny_generator(int res = 16) {
  GeneratorConfig cfg;
  cfg.channels = {8, 8, 8, 8};
  cfg.resolution = res;
  cfg.noise_dim = 6;
  return cfg;
}

Tensor<double> random_simplex(int b, int k, Rng& rng) {
  Tensor<double> s({b, k});
  for (int e = 0; e < b; ++e) {
    auto a = random_coefficients(k, rng);
    std::copy(a.begin(), a.end(), s.data() + e * k);
  }
  return s;
}

Eigen::MatrixXd random_spd(int n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = standard_normal(rng);
  Eigen::MatrixXd s = a * a.transpose() / n;
  s.diagonal().array() += 1e-3;
  return 0.5 * (s + s.transpose());
}

Eigen::VectorXd random_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = standard_normal(rng);
  return v;
}

Outcome properties() {
  constexpr int kTrials = 1000;
  const nn::ForwardContext inference{NormMode::Inference, nullptr};
  std::vector<std::string> failed;
  Rng rng(2);

  {
    bool ok = true;
    for (int t = 0; t < kTrials && ok; ++t) {
      const int k = 1 + static_cast<int>(uniform_index(rng, 9)), b = 1 + static_cast<int>(uniform_index(rng, 4));
      const int d = 2 + static_cast<int>(uniform_index(rng, 30));
      auto z = normal_tensor<float>({b, d}, rng, 1 + 5 * uniform01(rng));
      auto c = normal_tensor<float>({b * k, d}, rng, 1 + 5 * uniform01(rng));
      auto s = similarity_scores(Var<float>::constant(z), Var<float>::constant(c), k).value();
      for (int e = 0; e < b; ++e) {
        double sum = 0;
        for (int i = 0; i < k; ++i) {
          const double v = s[e * k + i];
          ok = ok && v >= 0 && v <= 1;
          sum += v;
        }
        ok = ok && std::abs(sum - 1) <= 1e-6;
      }
    }
    if (!ok) failed.push_back("simplex");
  }

  Rng init(3);
  MatchingGenerator<float> g(tiny_generator(), init);
  {
    bool ok = true;
    for (int t = 0; t < kTrials && ok; ++t) {
      const int k = 2 + static_cast<int>(uniform_index(rng, 4));
      auto cond = normal_tensor<float>({k, 1, 16, 16}, rng);
      auto z = normal_tensor<float>({1, 6}, rng);
      auto perm = sample_without_replacement(rng, static_cast<std::size_t>(k), static_cast<std::size_t>(k));
      std::vector<Tensor<float>> items;
      for (auto i : perm) items.push_back(unstack_item(cond, static_cast<int>(i)));
      ag::NoGradGuard ng;
      auto a = g.generate(cond, k, z, inference);
      auto b = g.generate(stack<float>(items), k, z, inference);
      for (int i = 0; i < k; ++i) ok = ok && b.scores.value()[i] == a.scores.value()[perm[i]];
      ok = ok && a.images.value() == b.images.value();
    }
    if (!ok) failed.push_back("permutation equivariance");
  }
  {
    bool ok = true;
    for (int t = 0; t < kTrials && ok; ++t) {
      auto cond = normal_tensor<float>({1, 1, 16, 16}, rng);
      ag::NoGradGuard ng;
      auto a = g.generate(cond, 1, normal_tensor<float>({1, 6}, rng), inference);
      auto b = g.generate(cond, 1, normal_tensor<float>({1, 6}, rng), inference);
      ok = a.scores.value()[0] == 1.0f && a.images.value() == b.images.value();
    }
    if (!ok) failed.push_back("K=1 z-independence");
  }
  {
    bool ok = true;
    for (int t = 0; t < kTrials && ok; ++t) {
      const int b = 1 + static_cast<int>(uniform_index(rng, 3)), k = 1 + static_cast<int>(uniform_index(rng, 7));
      auto s = random_simplex(b, k, rng);
      auto f = normal_tensor<double>({b * k, 3, 2, 2}, rng);
      auto r = fuse_features(Var<double>::constant(s), Var<double>::constant(f)).value();
      const std::size_t stride = 12;
      for (int e = 0; e < b; ++e)
        for (std::size_t j = 0; j < stride; ++j) {
          double lo = 1e300, hi = -1e300;
          for (int i = 0; i < k; ++i) {
            lo = std::min(lo, f[(e * k + i) * stride + j]);
            hi = std::max(hi, f[(e * k + i) * stride + j]);
          }
          ok = ok && r[e * stride + j] >= lo - 1e-9 && r[e * stride + j] <= hi + 1e-9;
        }
    }
    if (!ok) failed.push_back("convex hull");
  }
  double worst_fid = 0;
  for (int t = 0; t < kTrials; ++t) {
    const int f = 1 + static_cast<int>(uniform_index(rng, 16)), n = 2 + static_cast<int>(uniform_index(rng, 40));
    Eigen::MatrixXd x(n, f);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j) x(i, j) = 3 * standard_normal(rng);
    worst_fid = std::max(worst_fid, fid_from_features(x, x));
  }
  if (worst_fid > 1e-6) failed.push_back("FID self-distance");
  {
    bool ok = true;
    for (int t = 0; t < kTrials && ok; ++t) {
      const int c = 2 + static_cast<int>(uniform_index(rng, 9)), n = 1 + static_cast<int>(uniform_index(rng, 40));
      Eigen::MatrixXd p(n, c);
      const double temp = 0.1 + 5 * uniform01(rng);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) p(i, j) = std::exp(temp * standard_normal(rng));
        p.row(i) /= p.row(i).sum();
      }
      const double is = inception_score(p);
      ok = is >= 1.0 - 1e-12 && is <= c + 1e-9;
    }
    if (!ok) failed.push_back("IS range");
  }
  double worst_sym = 0;
  for (int t = 0; t < kTrials; ++t) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 10));
    GaussianStats a{random_vector(n, rng), random_spd(n, rng)};
    GaussianStats b{random_vector(n, rng), random_spd(n, rng)};
    worst_sym = std::max(worst_sym, std::abs(frechet_distance(a, b) - frechet_distance(b, a)));
  }
  if (worst_sym > 1e-8) failed.push_back("frechet symmetry");

  std::string detail = "7 properties x " + std::to_string(kTrials) + " trials; FID(x,x) max " + fmt("%.1e", worst_fid) +
                       ", |d(a,b)-d(b,a)| max " + fmt("%.1e", worst_sym);
  for (const auto& f : failed) detail += "; FAILED " + f;
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------- 3

template <class T>
struct Models {
  MatchingGenerator<T> gen;
  MatchingDiscriminator<T> disc;
};

template <class T>
Models<T> tiny_models(std::uint64_t seed) {
  Rng init(seed);
  GeneratorConfig gc = tiny_generator();
  DiscriminatorConfig dc;
  dc.channels = {8, 8, 8, 8, 8};
  dc.resolution = 16;
  dc.num_classes = 4;
  MatchingGenerator<T> g(gc, init);
  MatchingDiscriminator<T> d(dc, init);
  return {std::move(g), std::move(d)};
}

// Copies float parameters and buffers into the double model.
void copy_state(const nn::StateList<float>& from, const nn::StateList<double>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_state: different architectures");
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto& src = from[i].var.value().values();
    auto& dst = const_cast<Var<double>&>(to[i].var).mutable_value();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j];
  }
}

struct GradInputs {
  Tensor<double> cond, real, z;
  std::vector<int> fake_labels, real_labels;
  int k = 3;
};

// Every loss term of both players on the same inputs; generator run in
// batch-statistics mode without state change, dropout seeded per call.
template <class T>
Var<T> loss_term(const std::string& name, Models<T>& m, const GradInputs& in) {
  Rng drop(99);
  nn::ForwardContext ctx{NormMode::TrainFrozen, &drop};
  auto cond = Var<T>::constant(in.cond.template cast<T>());
  auto real = Var<T>::constant(in.real.template cast<T>());
  auto out = m.gen.generate(in.cond.template cast<T>(), in.k, in.z.template cast<T>(), ctx);
  if (name == "L_GD") return adv_g_loss(m.disc.score(out.images));
  if (name == "L_1") return weighted_reconstruction_loss(out.scores, cond, out.images);
  if (name == "L_c^G") return classification_loss(m.disc.classify(out.images), in.fake_labels);
  if (name == "L_m") return feature_matching_loss(out.scores, m.disc.extract_features(cond), m.disc.extract_features(out.images));
  auto fake = Var<T>::constant(out.images.value());
  if (name == "L_D") return hinge_d_loss(m.disc.score(fake), m.disc.score(real));
  return classification_loss(m.disc.classify(real), in.real_labels);  // L_c^D
}

Outcome gradients() {
  auto f = tiny_models<float>(17);
  auto d = tiny_models<double>(17);
  copy_state(f.gen.state(), d.gen.state());
  copy_state(f.disc.state(), d.disc.state());

  Rng rng(31);
  GradInputs in;
  // Sixteen episodes keep batch statistics at the 1x1 bottleneck usable.
  const int episodes = 16;
  in.cond = normal_tensor<double>({episodes * in.k, 1, 16, 16}, rng, 0.6);
  in.real = normal_tensor<double>({4, 1, 16, 16}, rng, 0.6);
  in.z = normal_tensor<double>({episodes, 6}, rng);
  for (int e = 0; e < episodes; ++e) in.fake_labels.push_back(e % 4);
  in.real_labels = {0, 2, 1, 3};
  for (auto* t : {&in.cond, &in.real})
    for (auto& v : t->values()) v = std::tanh(v);

  const std::vector<std::string> gen_params{"noise_embed.weight", "encoder.block1.c0.conv.weight",
                                            "encoder.block3.c2.conv.weight", "decoder.block1.up.conv.weight",
                                            "decoder.block3.c1.bn.gamma", "decoder.head.conv.weight"};
  const std::vector<std::string> disc_params{"conv_in.weight", "stage2.res1.conv1.weight", "stage4.res2.conv2.weight",
                                             "adv_head.weight", "cls_head.weight", "cls_head.bias"};
  const std::vector<std::string> losses{"L_GD", "L_1", "L_c^G", "L_m", "L_D", "L_c^D"};

  auto find = []<class T>(const nn::StateList<T>& st, const std::string& name) -> Var<T> {
    for (const auto& nv : st)
      if (nv.name == name) return nv.var;
    throw UsageError("no parameter " + name);
  };

  std::string detail;
  bool pass = true;
  int checked_total = 0;
  for (const auto& loss : losses) {
    const bool on_gen = loss != "L_D" && loss != "L_c^D";
    const auto& names = on_gen ? gen_params : disc_params;
    const auto f_state = on_gen ? f.gen.parameters() : f.disc.parameters();
    const auto d_state = on_gen ? d.gen.parameters() : d.disc.parameters();
    for (const auto& nv : f.gen.parameters()) const_cast<Var<float>&>(nv.var).zero_grad();
    for (const auto& nv : f.disc.parameters()) const_cast<Var<float>&>(nv.var).zero_grad();
    ag::backward(loss_term(loss, f, in));

    double worst = 0;
    int checked = 0, kinks = 0;
    for (const auto& name : names) {
      auto fp = find(f_state, name);
      auto dp = find(d_state, name);
      const auto& grad = fp.grad();
      double scale = 0;
      for (float v : grad.values()) scale = std::max(scale, static_cast<double>(std::abs(v)));
      if (scale == 0) continue;
      // Random coordinates among those carrying a non-negligible share of the
      // tensor's gradient.
      std::vector<std::size_t> live;
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (std::abs(grad[i]) >= 1e-2 * scale) live.push_back(i);
      Rng pick(checked_total + 1);
      const std::size_t n = std::min<std::size_t>(3, live.size());
      for (auto j : sample_without_replacement(pick, live.size(), n)) {
        const std::size_t i = live[j];
        auto& v = dp.mutable_value()[i];
        const double saved = v;
        auto central = [&](double h) {
          ag::NoGradGuard ng;
          v = saved + h;
          const double up = loss_term(loss, d, in).item();
          v = saved - h;
          const double down = loss_term(loss, d, in).item();
          v = saved;
          return (up - down) / (2 * h);
        };
        // Steps that disagree straddle a kink of a rectifier or an L1 term.
        const double numeric = central(1e-7), analytic = grad[i];
        if (std::abs(numeric - central(2e-7)) > 1e-6 * std::max(1.0, std::abs(numeric))) {
          ++kinks;
          continue;
        }
        worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12}));
        ++checked;
        ++checked_total;
      }
    }
    pass = pass && checked >= 3 && worst <= 1e-3;
    detail += (detail.empty() ? "" : ", ") + loss + " " + fmt("%.1e", worst) + "/" + std::to_string(checked);
    if (kinks) detail += " (" + std::to_string(kinks) + " at kinks)";
  }
  return {pass, "max rel error/coords: " + detail};
}

// ---------------------------------------------------------------- 4

Outcome oracles() {
  Rng rng(41);
  double worst_fuse = 0;
  for (int t = 0; t < 1000; ++t) {
    const int b = 1 + static_cast<int>(uniform_index(rng, 3)), k = 1 + static_cast<int>(uniform_index(rng, 9));
    auto s = random_simplex(b, k, rng);
    auto f = normal_tensor<double>({b * k, 4, 3, 3}, rng);
    auto r = fuse_features(Var<double>::constant(s), Var<double>::constant(f)).value();
    const std::size_t stride = r.size() / b;
    for (int e = 0; e < b; ++e)
      for (std::size_t j = 0; j < stride; ++j) {
        double acc = 0;
        for (int i = 0; i < k; ++i) acc += s[e * k + i] * f[(e * k + i) * stride + j];
        worst_fuse = std::max(worst_fuse, std::abs(acc - r[e * stride + j]));
      }
  }
  double worst_sqrt = 0;
  for (int n : {1, 2, 3, 4, 8, 16, 32, 48, 64}) {
    const auto a = random_spd(n, rng);
    oracle::Matrix rows(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) rows[i][j] = a(i, j);
    const auto ref = oracle::sqrt_spd(rows);
    const auto mine = sqrtm_psd(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) worst_sqrt = std::max(worst_sqrt, std::abs(mine(i, j) - ref[i][j]));
  }
  return {worst_fuse <= 1e-6 && worst_sqrt <= 1e-6,
          "fuse vs loop " + fmt("%.1e", worst_fuse) + ", sqrtm vs Jacobi (n<=64) " + fmt("%.1e", worst_sqrt)};
}

// ---------------------------------------------------------------- 5

bool desk_data() {
  const auto root = g_work / "desk";
  if (fs::exists(root / "data" / "prepared" / "split.json")) return true;
  return cli(root, "synth --out data/toy --categories 35 --per-category 30 --resolution 32 --seed 2024", "synth.log") &&
         cli(root, "prepare-data --root data/toy --split 20,5,10 --resolution 32 --seed 1 --out data/prepared",
             "prepare.log");
}

fs::path desk_checkpoint() { return g_work / "desk" / "run" / "checkpoints" / "last.ckpt"; }

bool g_desk_trained = false;

Outcome desk_training() {
  const auto root = g_work / "desk";
  if (!desk_data()) return {false, "could not prepare the toy dataset"};
  if (!cli(root, "train --config " + quote((kConfigs / "desk.json").string()) + " --out run", "train.log"))
    return {false, "training failed, see " + (root / "train.log").string()};
  g_desk_trained = true;

  std::map<int, double> val;
  bool finite = true;
  int max_epoch = 0;
  for (const auto& r : read_jsonl(root / "run" / "metrics.jsonl")) {
    const double v = r.at("value").get<double>();
    finite = finite && std::isfinite(v);
    max_epoch = std::max(max_epoch, r.at("epoch").get<int>());
    if (r.at("term") == "val_l1") val[r.at("epoch").get<int>()] = v;
  }
  if (max_epoch != 30 || !val.count(1) || !val.count(30)) return {false, "metrics log is incomplete"};
  const double ratio = val[30] / val[1];

  auto lg = load_generator(load_checkpoint(desk_checkpoint()));
  const auto m = manifest_from_json(read_json_file(root / "data" / "prepared" / "manifest.json"));
  ImageStore store(m);
  double min_dist = 1e300;
  int generated = 0;
  for (const auto* cats : {&lg.split.unseen, &lg.split.seen}) {
    const auto bank = generate_bank(*lg.generator, store, *cats, {16, lg.config.k, 5, 32});
    for (std::size_t c = 0; c < bank.images.size(); ++c)
      for (std::size_t i = 0; i < bank.images[c].size(); ++i) {
        const auto& ep = bank.episodes[c][i];
        for (int idx : ep.indices) {
          const auto real = store.image(ep.category_id, idx);
          double d = 0;
          for (std::size_t p = 0; p < real.size(); ++p) d += std::abs(real[p] - bank.images[c][i][p]);
          min_dist = std::min(min_dist, d / static_cast<double>(real.size()));
        }
        ++generated;
      }
  }
  const bool pass = finite && ratio <= 0.5 && min_dist > 0.01;
  return {pass, std::string(finite ? "losses finite" : "NON-FINITE losses") + "; val L1 " + fmt("%.4f", val[1]) +
                    " -> " + fmt("%.4f", val[30]) + " (ratio " + fmt("%.3f", ratio) + ", need <= 0.5); min distance to a conditional " +
                    fmt("%.4f", min_dist) + " over " + std::to_string(generated) + " images (need > 0.01)"};
}

// ---------------------------------------------------------------- 6

Outcome augmentation() {
  if (!g_desk_trained && !fs::exists(desk_checkpoint())) {
    const auto r = desk_training();
    if (!fs::exists(desk_checkpoint())) return {false, "no desk generator: " + r.detail};
  }
  const auto root = g_work / "desk";
  std::vector<double> standard, augmented;
  std::string detail;
  bool per_seed = true;
  for (int seed : {1, 2, 3}) {
    const std::string out = "lowdata_seed" + std::to_string(seed);
    fs::remove_all(root / out);
    if (!cli(root, "eval --checkpoint run/checkpoints/last.ckpt --protocol lowdata --shots 10 --mode both --count 512 --seed " +
                       std::to_string(seed) + " --out " + out,
             out + ".log"))
      return {false, "eval failed for seed " + std::to_string(seed)};
    double s = NAN, a = NAN;
    for (const auto& r : read_jsonl(root / out / "reports.jsonl"))
      (r.at("protocol").at("mode") == "augmented" ? a : s) = r.at("value").get<double>();
    standard.push_back(s);
    augmented.push_back(a);
    per_seed = per_seed && a >= s - 0.02;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " " + fmt("%.2f", 100 * s) +
              " -> " + fmt("%.2f", 100 * a);
  }
  const double ms = std::accumulate(standard.begin(), standard.end(), 0.0) / 3;
  const double ma = std::accumulate(augmented.begin(), augmented.end(), 0.0) / 3;
  return {per_seed && ma >= ms, "standard -> augmented accuracy (%): " + detail + "; mean " + fmt("%.2f", 100 * ms) +
                                    " -> " + fmt("%.2f", 100 * ma)};
}

// ---------------------------------------------------------------- 7

std::vector<std::vector<std::string>> parse_table(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (line.size() < 2 || line[0] != '|' || line[1] == '-') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line.substr(1));
    for (std::string cell; std::getline(ss, cell, '|');) {
      const auto b = cell.find_first_not_of(' '), e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    rows.push_back(cells);
  }
  return rows;
}

bool numeric(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  return *end == '\0' && std::isfinite(v);
}

Outcome ablation_grid() {
  const auto root = g_work / "ablation";
  if (!fs::exists(root / "data" / "prepared" / "split.json") &&
      !(cli(root, "synth --out data/toy --categories 20 --per-category 20 --resolution 16 --seed 7", "synth.log") &&
        cli(root, "prepare-data --root data/toy --split 10,2,8 --resolution 16 --seed 1 --out data/prepared", "prepare.log")))
    return {false, "could not prepare the ablation dataset"};
  const std::string base =
      "--manifest data/prepared/manifest.json --split data/prepared/split.json --epochs 2 --episodes-per-epoch 16 "
      "--batch-episodes 4 --validation-episodes 4 --gen-channels 8,8,8,8 --disc-channels 8,8,8,8,8 --noise-dim 8 "
      "--learning-rate 0.0005 --seed 3";
  for (const auto* name : {"k_grid", "settings"}) fs::remove_all(root / name);
  if (!cli(root, "ablate --spec " + quote((kConfigs / "ablation_k_grid.json").string()) + " " + base + " --out k_grid",
           "k_grid.log") ||
      !cli(root, "ablate --spec " + quote((kConfigs / "ablation_settings.json").string()) + " " + base + " --out settings",
           "settings.log"))
    return {false, "ablate failed"};

  std::vector<std::string> problems;
  const auto grid = parse_table(root / "k_grid" / "k_grid.txt");
  const std::vector<std::string> head{"", "K1=3", "K1=5", "K1=7", "K1=9"};
  if (grid.size() != 5 || grid[0] != head) problems.push_back("K grid header/rows");
  for (std::size_t r = 1; r < grid.size(); ++r) {
    if (grid[r].size() != 5 || grid[r][0] != "K2=" + std::to_string(2 * r + 1)) problems.push_back("K grid row " + std::to_string(r));
    for (std::size_t c = 1; c < grid[r].size(); ++c)
      if (!numeric(grid[r][c])) problems.push_back("K grid cell " + grid[r][0] + "/" + grid[0][c]);
  }

  const auto settings = parse_table(root / "settings" / "settings.txt");
  const std::vector<std::string> labels{"λ_r=0.01",          "λ_r=0.1",           "λ_r=1",          "λ_r=10",
                                        "λ_m=1",             "λ_m=0",             "matching coefficient",
                                        "random coefficient", "shared encoder",   "different encoder",
                                        "1 connection",      "2 connection",      "3 connection"};
  if (settings.size() != labels.size() + 1 || settings[0].size() != 4 || settings[0][1] != "accuracy")
    problems.push_back("settings header/rows");
  for (std::size_t r = 1; r < settings.size() && r <= labels.size(); ++r) {
    if (settings[r].empty() || settings[r][0] != labels[r - 1]) problems.push_back("settings label row " + std::to_string(r));
    for (std::size_t c = 1; c < settings[r].size(); ++c)
      if (!numeric(settings[r][c])) problems.push_back("settings cell " + settings[r][0] + "/" + settings[0][c]);
  }
  int reports = 0;
  for (const auto* name : {"k_grid", "settings"})
    for (const auto& r : read_jsonl(root / name / "reports.jsonl")) {
      ++reports;
      if (r.contains("error")) problems.push_back("report error: " + r.at("error").get<std::string>());
    }
  if (reports != 16 + 3 * 13) problems.push_back(std::to_string(reports) + " metric reports");

  std::string detail = "4x4 K1/K2 accuracy grid, " + std::to_string(settings.empty() ? 0 : settings.size() - 1) +
                       " setting rows x accuracy/FID/IS, " + std::to_string(reports) + " reports";
  for (std::size_t i = 0; i < std::min<std::size_t>(problems.size(), 5); ++i) detail += "; " + problems[i];
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------- 8

Outcome reproducibility() {
  std::vector<std::string> problems;
  const auto root = g_work / "repro";
  fs::remove_all(root);
  if (!cli(root, "synth --out toy --categories 6 --per-category 8 --resolution 16 --seed 4", "synth.log") ||
      !cli(root, "prepare-data --root toy --split 4,1,1 --resolution 16 --seed 2 --out prepared", "prepare.log"))
    return {false, "could not prepare data"};
  const std::string train =
      "train --manifest prepared/manifest.json --split prepared/split.json --epochs 2 --episodes-per-epoch 8 "
      "--batch-episodes 4 --validation-episodes 4 --gen-channels 8,8,8,8 --disc-channels 8,8,8,8,8 --noise-dim 8 "
      "--seed 9 --out ";
  if (!cli(root, train + "a", "a.log") || !cli(root, train + "b", "b.log")) return {false, "training failed"};
  if (slurp(root / "a" / "metrics.jsonl") != slurp(root / "b" / "metrics.jsonl")) problems.push_back("metric logs differ");
  if (slurp(root / "a" / "checkpoints" / "last.ckpt") != slurp(root / "b" / "checkpoints" / "last.ckpt"))
    problems.push_back("checkpoints differ");

  // Trainer state -> file -> fresh generator.
  const auto m = manifest_from_json(read_json_file(root / "prepared" / "manifest.json"));
  ImageStore store(m);
  const auto split = split_from_json(read_json_file(root / "prepared" / "split.json"));
  auto cfg = config_from_json(read_json_file(root / "a" / "run_manifest.json").at("config"));
  Trainer t(cfg, store, split);
  t.restore(load_checkpoint(root / "a" / "checkpoints" / "last.ckpt"));
  save_checkpoint(t.checkpoint(), root / "roundtrip.ckpt");
  auto loaded = load_generator(load_checkpoint(root / "roundtrip.ckpt"));
  Rng rng(12);
  const nn::ForwardContext ctx{NormMode::Inference, nullptr};
  bool same = true;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Episode> eps;
    for (int i = 0; i < 4; ++i) eps.push_back(sample_episode(m, split.seen, cfg.k, rng));
    const auto cond = episode_batch(store, eps);
    const auto z = normal_tensor<float>({4, cfg.noise_dim}, rng);
    ag::NoGradGuard ng;
    same = same && t.generator().generate(cond, cfg.k, z, ctx).images.value() ==
                       loaded.generator->generate(cond, cfg.k, z, ctx).images.value();
  }
  if (!same) problems.push_back("reloaded generator differs");
  if (slurp(root / "roundtrip.ckpt") != slurp(root / "a" / "checkpoints" / "last.ckpt"))
    problems.push_back("re-saved checkpoint differs");

  DatasetManifest omni;
  omni.root = "/nonexistent";
  for (int c = 0; c < 1623; ++c) omni.categories.push_back({c, "c" + std::to_string(c), {"c" + std::to_string(c) + "/0.png"}});
  const auto s = split_categories(omni, {1200, 212, 211}, 0);
  std::set<int> all(s.seen.begin(), s.seen.end());
  all.insert(s.validation_seen.begin(), s.validation_seen.end());
  all.insert(s.unseen.begin(), s.unseen.end());
  const bool sizes = s.seen.size() == 1200 && s.validation_seen.size() == 212 && s.unseen.size() == 211 && all.size() == 1623;
  if (!sizes) problems.push_back("1623-category split is not 1200/212/211");

  std::string detail = "identical-seed runs match bytewise; save/load/generate bitwise over 10 batches; split " +
                       std::to_string(s.seen.size()) + "/" + std::to_string(s.validation_seen.size()) + "/" +
                       std::to_string(s.unseen.size());
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = fs::temp_directory_path() / "matchinggan_acceptance";
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = fs::absolute(argv[++i]);
    } else if (arg.find_first_not_of("0123456789") == std::string::npos && !arg.empty()) {
      chosen.insert(std::stoi(arg));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [criterion ...]\n";
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, closed_forms}, {2, properties},  {3, gradients},    {4, oracles},
      {5, desk_training}, {6, augmentation}, {7, ablation_grid}, {8, reproducibility}};
  int failures = 0;
  for (const auto& [n, fn] : criteria) {
    if (!chosen.empty() && !chosen.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
              << fmt("%.0f", secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
