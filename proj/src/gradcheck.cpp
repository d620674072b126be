#include "fewgen/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "fewgen/classifier.hpp"
#include "fewgen/meta.hpp"

namespace fewgen {

namespace {

using Build = std::function<Var(Tape&, const ParameterSet&)>;

double fd_error(const Build& build, const ParameterSet& ps, double h) {
  Tape tape;
  auto g = backward_gradients(build(tape, ps), ps).flatten();
  auto fd = finite_difference_oracle(
                [&](const ParameterSet& p) {
                  Tape t;
                  return build(t, p).value().item();
                },
                ps, h)
                .flatten();
  return relative_error(g, fd);
}

Tensor gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v));
}

Var project(Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(x, x.tape->constant(gaussian(rng, x.rows(), x.cols()))));
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.prefix_len = 2;
  c.max_len = 12;
  c.ffn_mult = 2;
  return c;
}

// Seeded init plus large noise, so labels and positions are distinguishable.
BackboneParams tiny_backbone(std::uint64_t seed) {
  auto bb = init_backbone(tiny_model(), seed);
  std::mt19937_64 rng(seed ^ 0xb0b0ULL);
  std::normal_distribution<double> n(0.0, 0.4);
  auto flat = bb.params.flatten();
  for (auto& v : flat) v += n(rng);
  bb.params.assign_flat(flat);
  bb.freeze();
  return bb;
}

LabeledSequence random_sequence(std::mt19937_64& rng, std::size_t label) {
  std::uniform_int_distribution<std::size_t> len(2, 6);
  std::uniform_int_distribution<TokenId> tok(Vocabulary::kReserved, tiny_model().vocab_size - 1);
  std::vector<TokenId> t(len(rng));
  for (auto& x : t) x = tok(rng);
  return make_single(std::move(t), label);
}

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += x = u(rng);
  for (auto& x : p) x /= s;
  return p;
}

SuiteResult primitives(const GradcheckOptions& o, double tol) {
  const std::vector<std::function<Var(Var, Var)>> ops{
      [](Var a, Var b) { return ad::matmul(a, ad::transpose(b)); },
      [](Var a, Var b) { return ad::matmul_nt(a, b); },
      [](Var a, Var b) { return ad::add(a, b); },
      [](Var a, Var b) { return ad::sub(a, b); },
      [](Var a, Var b) { return ad::mul(a, b); },
      [](Var a, Var b) { return ad::div(a, ad::add_scalar(ad::mul(b, b), 0.5)); },
      [](Var a, Var b) { return ad::add_row(a, ad::slice_rows(b, 0, 1)); },
      [](Var a, Var) { return ad::scale(ad::add_scalar(a, 0.3), -1.7); },
      [](Var a, Var) { return ad::tanh(a); },
      [](Var a, Var) { return ad::gelu(a); },
      [](Var a, Var) { return ad::exp(ad::scale(a, 0.3)); },
      [](Var a, Var) { return ad::log(ad::add_scalar(ad::mul(a, a), 0.5)); },
      [](Var a, Var) { return ad::softmax_rows(a); },
      [](Var a, Var) { return ad::softmax_rows(a, 1); },
      [](Var a, Var) { return ad::log_softmax_rows(a); },
      [](Var a, Var b) { return ad::layer_norm_rows(a, ad::slice_rows(b, 0, 1), ad::slice_rows(b, 1, 1)); },
      [](Var a, Var) {
        std::vector<std::size_t> ids{2, 0, 2, 1};
        return ad::embedding(a, ids);
      },
      [](Var a, Var) { return ad::mean_rows(a); },
      [](Var a, Var b) {
        std::vector<Var> v{a, b};
        return ad::concat_rows(v);
      },
      [](Var a, Var b) {
        std::vector<Var> v{a, b};
        return ad::concat_cols(v);
      },
      [](Var a, Var) { return ad::reshape(ad::slice_cols(a, 1, 2), 2, 3); },
      [](Var a, Var b) { return ad::set_row(a, 1, ad::slice_rows(b, 2, 1)); },
      [](Var a, Var) {
        std::vector<std::size_t> r{0, 2, 2}, c{3, 1, 1};
        return ad::pick(a, r, c);
      },
  };
  SuiteResult res{"primitives", 0, 0.0, tol, false};
  for (std::size_t op = 0; op < ops.size(); ++op)
    for (std::size_t i = 0; i < o.loss_instances; ++i) {
      std::mt19937_64 rng(o.seed * 1000003 + op * 1009 + i);
      ParameterSet ps;
      ps.add("a", gaussian(rng, 3, 4));
      ps.add("b", gaussian(rng, 3, 4));
      const std::uint64_t proj = rng();
      res.worst = std::max(res.worst, fd_error(
                                          [&](Tape& t, const ParameterSet& p) {
                                            return project(ops[op](t.parameter(p, "a"), t.parameter(p, "b")), proj);
                                          },
                                          ps, 1e-5));
      ++res.instances;
    }
  res.pass = res.worst <= tol;
  return res;
}

// A loss over the prefix bank of a tiny model, on one random instance.
using LossOnRows = std::function<Var(const std::vector<Var>& rows, const LabeledSequence& seq,
                                     const std::vector<std::size_t>& included, std::mt19937_64& rng)>;

SuiteResult prefix_loss_suite(const std::string& name, const LossOnRows& loss, const GradcheckOptions& o,
                              double tol, std::uint64_t salt) {
  SuiteResult res{name, 0, 0.0, tol, false};
  for (std::size_t i = 0; i < o.loss_instances; ++i) {
    std::mt19937_64 rng(o.seed * 7919 + salt * 104729 + i);
    const std::size_t labels = 2 + i % 2;
    auto bb = tiny_backbone(rng());
    auto bank = random_prefix_bank(bb.config, labels, false, rng(), 0.5);
    auto seq = random_sequence(rng, i % labels);
    auto included = included_positions(seq);
    const std::uint64_t extra = rng();
    auto build = [&](Tape& t, const ParameterSet& p) {
      PrefixBank b = bank;
      b.params = p;
      std::mt19937_64 local(extra);
      auto rows = label_logprob_rows(bind_backbone(t, bb), bind_all_prefixes(t, b), seq);
      return loss(rows, seq, included, local);
    };
    res.worst = std::max(res.worst, fd_error(build, bank.params, 1e-5));
    ++res.instances;
  }
  res.pass = res.worst <= tol;
  return res;
}

SuiteResult class_suite(const GradcheckOptions& o, double tol) {
  SuiteResult res{"class", 0, 0.0, tol, false};
  for (std::size_t i = 0; i < o.loss_instances; ++i) {
    std::mt19937_64 rng(o.seed * 31337 + i);
    const std::size_t labels = 2 + i % 2;
    auto bb = tiny_backbone(rng());
    auto clf = init_classifier(bb, labels, rng());
    {
      // Non-trivial head so the gradient is not dominated by the encoder.
      auto head = gaussian(rng, bb.config.d_model, labels, 0.5);
      clf.params.set("head.weight", head);
    }
    auto seq = random_sequence(rng, i % labels);
    auto q = smoothed_targets(seq.label, labels, 0.15);
    std::vector<double> ensemble = i % 4 == 3 ? std::vector<double>{} : random_distribution(rng, labels);
    std::uniform_real_distribution<double> lam(0.5, 20.0);
    const double lambda = lam(rng);
    auto build = [&](Tape& t, const ParameterSet& p) {
      ClassifierParams c = clf;
      c.params = p;
      return class_loss_var(classifier_logits(t, c, seq), q, ensemble, lambda);
    };
    res.worst = std::max(res.worst, fd_error(build, clf.params, 1e-5));
    ++res.instances;
  }
  res.pass = res.worst <= tol;
  return res;
}

SuiteResult meta_suite(const GradcheckOptions& o, double tol) {
  SuiteResult res{"meta", 0, 0.0, tol, false};
  for (std::size_t i = 0; i < o.meta_instances; ++i) {
    std::mt19937_64 rng(o.seed * 65537 + i);
    auto bb = tiny_backbone(rng());
    auto bank = random_prefix_bank(bb.config, 2, false, rng(), 0.6);
    auto net = init_weight_net(100, rng(), 0.5);
    Dataset batch{random_sequence(rng, 0), random_sequence(rng, 1)};
    const double lr = i % 2 == 0 ? 2e-2 : 0.5;
    auto mg = meta_gradient(bb, bank, net, batch, {lr, o.disc_grad_scale});
    auto fd = finite_difference_oracle(
        [&](const ParameterSet& p) { return lookahead_disc_loss(bb, bank, WeightNetState{p}, batch, lr); },
        net.params, 1e-4);
    res.worst = std::max(res.worst, relative_error(mg.weight_net.flatten(), fd.flatten()));
    ++res.instances;
  }
  res.pass = res.worst <= tol;
  return res;
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suites(const GradcheckOptions& o, const std::vector<std::string>& names) {
  const double loss_tol = o.tol.value_or(o.loss_tol);
  const double meta_tol = o.tol.value_or(o.meta_tol);
  std::vector<SuiteResult> out;
  for (const auto& name : names) {
    if (name == "primitives") {
      out.push_back(primitives(o, loss_tol));
    } else if (name == "gen") {
      out.push_back(prefix_loss_suite(
          name, [](const auto& rows, const auto& seq, const auto& inc, auto&) { return gen_loss_var(rows[seq.label], inc); },
          o, loss_tol, 1));
    } else if (name == "disc") {
      out.push_back(prefix_loss_suite(
          name, [](const auto& rows, const auto& seq, const auto& inc, auto&) { return disc_loss_var(rows, seq.label, inc); },
          o, loss_tol, 2));
    } else if (name == "w-gen") {
      out.push_back(prefix_loss_suite(
          name,
          [](const auto& rows, const auto& seq, const auto& inc, std::mt19937_64& rng) {
            return weighted_gen_loss_var(rows[seq.label], inc, random_distribution(rng, inc.size()));
          },
          o, loss_tol, 3));
    } else if (name == "combined") {
      out.push_back(prefix_loss_suite(
          name,
          [](const auto& rows, const auto& seq, const auto& inc, std::mt19937_64& rng) {
            std::uniform_real_distribution<double> mu(0.1, 2.0);
            return combined_loss_var(gen_loss_var(rows[seq.label], inc), disc_loss_var(rows, seq.label, inc), mu(rng));
          },
          o, loss_tol, 4));
    } else if (name == "class") {
      out.push_back(class_suite(o, loss_tol));
    } else if (name == "meta") {
      out.push_back(meta_suite(o, meta_tol));
    } else {
      throw Error("gradcheck: unknown suite " + name);
    }
  }
  return out;
}

std::vector<SuiteResult> run_gradcheck(const GradcheckOptions& options) {
  return run_gradcheck_suites(options, {"primitives", "gen", "disc", "w-gen", "combined", "class", "meta"});
}

bool print_gradcheck(std::ostream& out, const std::vector<SuiteResult>& results, const GradcheckOptions& options) {
  if (options.tol) out << "tolerance override: " << *options.tol << "\n";
  if (options.disc_grad_scale != 1.0) out << "discriminative gradient scaled by " << options.disc_grad_scale << "\n";
  bool ok = true;
  for (const auto& r : results) {
    out << r.name << ": " << r.instances << " instances, worst relative error " << r.worst << " (tol " << r.tol
        << ") " << (r.pass ? "PASS" : "FAIL") << "\n";
    ok = ok && r.pass;
  }
  out << (ok ? "all suites passed" : "gradient check FAILED") << "\n";
  return ok;
}

}  // namespace fewgen
