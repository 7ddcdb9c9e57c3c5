#pragma once

#include <utility>
#include <vector>

#include "structest/common.hpp"
#include "structest/rng.hpp"

namespace structest {

// Bag-of-words documents as (word id, count) pairs over a caller-supplied
// integer vocabulary; no tokenization happens here.
struct Corpus {
  std::vector<std::vector<std::pair<int, int>>> docs;
  int vocab_size = 0;

  void validate() const {
    require(vocab_size >= 1, "corpus: vocab_size >= 1");
    for (const auto& doc : docs)
      for (auto [w, c] : doc)
        require(w >= 0 && w < vocab_size && c >= 0, "corpus: bad word id or count");
  }

  int doc_total(std::size_t d) const {
    int t = 0;
    for (auto [w, c] : docs[d]) t += c;
    return t;
  }
};

struct LdaModel {
  int k = 0;
  double alpha = 0.0;
  double eta = 0.0;
  Matrix beta;                      // k x V, rows sum to 1
  std::vector<Vector> gamma;        // per-document Dirichlet parameters
  std::vector<Matrix> phi;          // per-document: distinct-word x k simplex rows
};

inline double digamma(double x) {
  // Recurrence up to x >= 6, then the asymptotic expansion.
  double value = 0.0;
  while (x < 6.0) {
    value -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  value += std::log(x) - 0.5 * inv -
           inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
  return value;
}

struct LdaVemResult {
  LdaModel model;
  std::vector<double> elbo_trace;
};

namespace detail {

// Variational bound for one document at (gamma, phi) given beta; symmetric
// Dirichlet prior alpha.
inline double lda_doc_bound(const std::vector<std::pair<int, int>>& doc,
                            const Vector& gamma, const Matrix& phi,
                            const Matrix& log_beta, double alpha, int k) {
  double gsum = gamma.sum();
  double dig_sum = digamma(gsum);
  Vector dig(k);
  for (int i = 0; i < k; ++i) dig(i) = digamma(gamma(i)) - dig_sum;

  double bound = std::lgamma(k * alpha) - k * std::lgamma(alpha);
  for (int i = 0; i < k; ++i) bound += (alpha - 1.0) * dig(i);

  for (std::size_t n = 0; n < doc.size(); ++n) {
    auto [w, c] = doc[n];
    for (int i = 0; i < k; ++i) {
      double p = phi(static_cast<int>(n), i);
      if (p <= 0.0) continue;
      bound += c * p * (dig(i) + log_beta(i, w) - std::log(p));
    }
  }

  bound -= std::lgamma(gsum);
  for (int i = 0; i < k; ++i) {
    bound += std::lgamma(gamma(i));
    bound -= (gamma(i) - 1.0) * dig(i);
  }
  return bound;
}

}  // namespace detail

// Variational EM. The per-document fixed point iterates
//   phi_ni ∝ beta_{i,w_n} exp(digamma(gamma_i)),  gamma = alpha + sum_n c_n phi_n
// and the M-step renormalizes lambda_ij = eta + sum_d sum_n phi c w. The
// reported trace is the variational bound plus the eta-smoothing term for
// beta, which this coordinate scheme increases monotonically.
inline LdaVemResult lda_vem(const Corpus& corpus, int k, double alpha = 0.1,
                            double eta = 0.01, double tol = 1e-6,
                            int max_iter = 100) {
  corpus.validate();
  require(!corpus.docs.empty(), "lda_vem: corpus must be nonempty");
  require(k >= 1, "lda_vem: k >= 1");
  require(alpha > 0.0 && eta > 0.0, "lda_vem: alpha, eta > 0");

  const int v = corpus.vocab_size;
  const auto n_docs = corpus.docs.size();

  LdaVemResult res;
  auto& model = res.model;
  model.k = k;
  model.alpha = alpha;
  model.eta = eta;

  // Uniform-ish start: beta proportional to eta + corpus counts split evenly.
  Matrix lambda = Matrix::Constant(k, v, eta);
  for (std::size_t d = 0; d < n_docs; ++d)
    for (auto [w, c] : corpus.docs[d])
      for (int i = 0; i < k; ++i)
        lambda(i, w) += static_cast<double>(c) / k * (1.0 + 0.1 * ((w + i) % k));
  model.beta = lambda.array().colwise() / lambda.rowwise().sum().array();

  model.gamma.assign(n_docs, Vector());
  model.phi.assign(n_docs, Matrix());

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iter; ++iter) {
    Matrix log_beta = model.beta.array().max(1e-300).log();
    Matrix suff = Matrix::Zero(k, v);
    double bound = 0.0;

    for (std::size_t d = 0; d < n_docs; ++d) {
      const auto& doc = corpus.docs[d];
      const int total = corpus.doc_total(d);
      const int distinct = static_cast<int>(doc.size());

      Vector gamma = Vector::Constant(k, alpha + static_cast<double>(total) / k);
      Matrix phi = Matrix::Constant(std::max(distinct, 1), k, 1.0 / k);
      if (total == 0) {
        // Zero-count document: gamma stays at the prior, no suff stats.
        model.gamma[d] = Vector::Constant(k, alpha);
        model.phi[d] = phi;
        continue;
      }

      for (int inner = 0; inner < 60; ++inner) {
        double gsum = gamma.sum();
        Vector dig(k);
        for (int i = 0; i < k; ++i) dig(i) = digamma(gamma(i)) - digamma(gsum);
        Vector new_gamma = Vector::Constant(k, alpha);
        for (int n = 0; n < distinct; ++n) {
          auto [w, c] = doc[n];
          Vector logp = dig + log_beta.col(w);
          double lse = log_sum_exp(logp);
          phi.row(n) = (logp.array() - lse).exp().transpose();
          new_gamma += c * phi.row(n).transpose();
        }
        double delta = (new_gamma - gamma).cwiseAbs().maxCoeff();
        gamma = new_gamma;
        if (delta < 1e-8) break;
      }

      model.gamma[d] = gamma;
      model.phi[d] = phi;
      for (int n = 0; n < distinct; ++n) {
        auto [w, c] = doc[n];
        suff.col(w) += c * phi.row(n).transpose();
      }
      bound += detail::lda_doc_bound(doc, gamma, phi, log_beta, alpha, k);
    }

    // eta-smoothing regularizer on beta, maximized exactly by the update below.
    bound += eta * log_beta.sum();
    res.elbo_trace.push_back(bound);

    Matrix new_lambda = suff.array() + eta;
    model.beta = new_lambda.array().colwise() / new_lambda.rowwise().sum().array();

    if (iter > 0 && bound - prev < tol) break;
    prev = bound;
  }
  return res;
}

// Collapsed Gibbs sampler; beta/theta are the predictive estimates from the
// final count tables.
struct LdaGibbsResult {
  LdaModel model;
  Matrix theta;             // doc-topic predictive estimates
  double assignment_loglik = 0.0;  // log p(w | z) at the final state
  std::vector<std::vector<int>> z;  // final token-level topic assignments
};

inline double lda_assignment_loglik(const Matrix& topic_word_counts, double delta) {
  const int k = static_cast<int>(topic_word_counts.rows());
  const int v = static_cast<int>(topic_word_counts.cols());
  double ll = k * (std::lgamma(v * delta) - v * std::lgamma(delta));
  for (int t = 0; t < k; ++t) {
    for (int w = 0; w < v; ++w) ll += std::lgamma(topic_word_counts(t, w) + delta);
    ll -= std::lgamma(topic_word_counts.row(t).sum() + v * delta);
  }
  return ll;
}

inline LdaGibbsResult lda_gibbs(const Corpus& corpus, int k, double alpha,
                                double delta, int iterations, std::uint64_t seed) {
  corpus.validate();
  require(!corpus.docs.empty(), "lda_gibbs: corpus must be nonempty");
  require(k >= 1 && alpha > 0.0 && delta > 0.0, "lda_gibbs: bad priors");

  const int v = corpus.vocab_size;
  const auto n_docs = corpus.docs.size();
  Rng rng(seed);

  // Token-level expansion.
  std::vector<std::vector<int>> words(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d)
    for (auto [w, c] : corpus.docs[d])
      for (int r = 0; r < c; ++r) words[d].push_back(w);

  Matrix nw = Matrix::Zero(k, v);   // topic-word
  Matrix nd = Matrix::Zero(static_cast<int>(n_docs), k);  // doc-topic
  Vector nt = Vector::Zero(k);      // topic totals

  LdaGibbsResult res;
  res.z.resize(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d) {
    res.z[d].resize(words[d].size());
    for (std::size_t n = 0; n < words[d].size(); ++n) {
      int t = rng.uniform_int(k);
      res.z[d][n] = t;
      nw(t, words[d][n]) += 1;
      nd(static_cast<int>(d), t) += 1;
      nt(t) += 1;
    }
  }

  Vector probs(k);
  for (int sweep = 0; sweep < iterations; ++sweep) {
    for (std::size_t d = 0; d < n_docs; ++d) {
      for (std::size_t n = 0; n < words[d].size(); ++n) {
        int w = words[d][n];
        int old = res.z[d][n];
        nw(old, w) -= 1;
        nd(static_cast<int>(d), old) -= 1;
        nt(old) -= 1;
        for (int t = 0; t < k; ++t) {
          probs(t) = (nw(t, w) + delta) / (nt(t) + v * delta) *
                     (nd(static_cast<int>(d), t) + alpha);
        }
        int pick = rng.categorical(probs);
        res.z[d][n] = pick;
        nw(pick, w) += 1;
        nd(static_cast<int>(d), pick) += 1;
        nt(pick) += 1;
      }
    }
  }

  res.model.k = k;
  res.model.alpha = alpha;
  res.model.eta = delta;
  res.model.beta.resize(k, v);
  for (int t = 0; t < k; ++t)
    for (int w = 0; w < v; ++w)
      res.model.beta(t, w) = (nw(t, w) + delta) / (nt(t) + v * delta);
  res.theta.resize(static_cast<int>(n_docs), k);
  for (std::size_t d = 0; d < n_docs; ++d) {
    double total = nd.row(static_cast<int>(d)).sum();
    for (int t = 0; t < k; ++t)
      res.theta(static_cast<int>(d), t) = (nd(static_cast<int>(d), t) + alpha) /
                                          (total + k * alpha);
  }
  res.assignment_loglik = lda_assignment_loglik(nw, delta);
  return res;
}

}  // namespace structest
