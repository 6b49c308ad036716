#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "blindsr/kernels.hpp"
#include "blindsr/metrics.hpp"

#ifdef BLINDSR_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace blindsr;

TEST_CASE("isotropic kernel basics") {
  // near-delta limit
  BlurKernel d = make_isotropic(21, 0.01);
  CHECK(d.at(10, 10) > 0.999);

  // normalization forced for arbitrary (size, sigma)
  for (double s : {0.2, 0.7, 1.3, 2.6, 4.0})
    for (int sz : {5, 11, 21})
      CHECK(std::abs(make_isotropic(sz, s).sum() - 1.0) < 1e-9);

  // matches the brute-force exp(-(i^2+j^2)/(2 s^2))/Z grid
  BlurKernel k = make_isotropic(21, 2.0);
  double z = 0.0;
  std::vector<double> want(21 * 21);
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j) {
      double di = i - 10, dj = j - 10;
      want[static_cast<size_t>(i * 21 + j)] =
          std::exp(-(di * di + dj * dj) / (2.0 * 2.0 * 2.0));
      z += want[static_cast<size_t>(i * 21 + j)];
    }
  for (int i = 0; i < 21 * 21; ++i)
    CHECK(k.weights[static_cast<size_t>(i)] ==
          doctest::Approx(want[static_cast<size_t>(i)] / z).epsilon(1e-12));

  // 180-degree symmetry
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j)
      CHECK(k.at(i, j) == k.at(20 - i, 20 - j));

  // larger sigma strictly lowers the center weight
  double prev = 2.0;
  for (double s = 0.2; s <= 4.01; s += 0.2) {
    double c = make_isotropic(21, s).at(10, 10);
    CHECK(c < prev);
    prev = c;
  }

  CHECK_THROWS(make_isotropic(20, 1.0));   // even size
  CHECK_THROWS(make_isotropic(21, 0.0));   // non-positive sigma
  CHECK_THROWS(make_isotropic(21, -1.0));
}

TEST_CASE("anisotropic kernel properties") {
  Rng rng(99);
  // equal axes reduce to the isotropic kernel for any rotation
  BlurKernel iso = make_isotropic(21, 2.0);
  for (double th : {0.0, 0.3, 1.2, -2.8}) {
    BlurKernel a = make_anisotropic(21, 2.0, 2.0, th, 0.0, rng);
    for (int i = 0; i < 21 * 21; ++i)
      CHECK(std::abs(a.weights[static_cast<size_t>(i)] -
                     iso.weights[static_cast<size_t>(i)]) < 1e-12);
  }

  // axis swap == 90-degree rotation
  BlurKernel k1 = make_anisotropic(11, 1.1, 3.0, 1.5707963267948966, 0.0, rng);
  BlurKernel k2 = make_anisotropic(11, 3.0, 1.1, 0.0, 0.0, rng);
  for (int i = 0; i < 11 * 11; ++i)
    CHECK(std::abs(k1.weights[static_cast<size_t>(i)] -
                   k2.weights[static_cast<size_t>(i)]) < 1e-12);

  // multiplicative noise keeps normalization and non-negativity
  BlurKernel n = make_anisotropic(21, 2.5, 1.2, 0.7, 0.25, rng);
  CHECK(std::abs(n.sum() - 1.0) < 1e-9);
  for (double w : n.weights) CHECK(w >= 0.0);

  CHECK_THROWS(make_anisotropic(21, 2.0, 2.0, 0.0, 0.3, rng));   // amp > 0.25
  CHECK_THROWS(make_anisotropic(21, 2.0, 2.0, 0.0, -0.1, rng));
  CHECK_THROWS(make_anisotropic(10, 2.0, 2.0, 0.0, 0.0, rng));
}

TEST_CASE("seeded anisotropic generation matches the golden file") {
  Rng rng(Rng(7).split("golden").seed());
  BlurKernel k = make_anisotropic(21, 2.5, 1.2, 0.7, 0.25, rng);
  BlurKernel golden =
      load_kernel(std::string(BLINDSR_TEST_DATA_DIR) + "/aniso_golden.bdk");
  REQUIRE(golden.size == k.size);
  for (int i = 0; i < 21 * 21; ++i)
    CHECK(k.weights[static_cast<size_t>(i)] ==
          golden.weights[static_cast<size_t>(i)]);  // bit-exact
}

TEST_CASE("gaussian8 test set") {
  auto ks = sample_gaussian8();
  CHECK(ks.size() == 8);
  CHECK(ks.front().meta.sigma_x == doctest::Approx(1.8));
  CHECK(ks.back().meta.sigma_x == doctest::Approx(3.2));
  for (size_t i = 0; i + 1 < ks.size(); ++i)
    CHECK(ks[i + 1].meta.sigma_x - ks[i].meta.sigma_x ==
          doctest::Approx(0.2).epsilon(1e-12));
  for (const auto& k : ks) {
    CHECK(k.size == 21);
    CHECK(std::abs(k.sum() - 1.0) < 1e-9);
  }
}

#ifdef BLINDSR_HAVE_EIGEN
TEST_CASE("jacobi eigensolver against the Eigen oracle") {
  Rng rng(31);
  const int n = 24;
  std::vector<double> a(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double v = rng.normal();
      a[static_cast<size_t>(i) * n + j] = v;
      a[static_cast<size_t>(j) * n + i] = v;
    }
  std::vector<double> evals, evecs;
  symmetric_eig(a, n, evals, evecs);

  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = a[static_cast<size_t>(i) * n + j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  // Eigen sorts ascending; ours descending
  for (int i = 0; i < n; ++i)
    CHECK(evals[static_cast<size_t>(i)] ==
          doctest::Approx(es.eigenvalues()(n - 1 - i)).epsilon(1e-10));
  // eigenvector property: A v = lambda v
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < n; ++i) {
      double av = 0;
      for (int j = 0; j < n; ++j)
        av += a[static_cast<size_t>(i) * n + j] * evecs[static_cast<size_t>(r) * n + j];
      CHECK(av == doctest::Approx(evals[static_cast<size_t>(r)] *
                                  evecs[static_cast<size_t>(r) * n + i])
                      .epsilon(1e-8)
                      .scale(1.0));
    }
  }
}
#endif

TEST_CASE("PCA fit, orthonormality, round trips") {
  auto corpus = pca_training_corpus(400, 11, 3);
  KernelPCA pca = fit_pca(corpus, 10);
  const int n = 121;

  // || B B^T - I ||_inf < 1e-8
  for (int r = 0; r < pca.dim; ++r)
    for (int q = 0; q < pca.dim; ++q) {
      double acc = 0;
      for (int i = 0; i < n; ++i)
        acc += pca.basis[static_cast<size_t>(r) * n + i] *
               pca.basis[static_cast<size_t>(q) * n + i];
      CHECK(std::abs(acc - (r == q ? 1.0 : 0.0)) < 1e-8);
    }

  // decode output sums to 1
  std::vector<double> code(10, 0.0);
  code[0] = 0.05;
  code[3] = -0.02;
  BlurKernel dec = decode(pca, code);
  CHECK(std::abs(dec.sum() - 1.0) < 1e-12);

  // projector idempotence: encode of the linear reconstruction returns the
  // code exactly (orthonormal basis)
  BlurKernel k = make_isotropic(11, 2.0);
  std::vector<double> c1 = encode(pca, k);
  BlurKernel lin;
  lin.size = 11;
  lin.weights = decode_linear(pca, c1);
  std::vector<double> c2 = encode(pca, lin);
  for (int i = 0; i < 10; ++i)
    CHECK(std::abs(c1[static_cast<size_t>(i)] - c2[static_cast<size_t>(i)]) < 1e-10);
  // the clamped sampling decode only perturbs the code slightly
  std::vector<double> c3 = encode(pca, decode(pca, c1));
  for (int i = 0; i < 10; ++i)
    CHECK(std::abs(c1[static_cast<size_t>(i)] - c3[static_cast<size_t>(i)]) < 1e-4);

  // training-set mean kernel encodes to (near) zero
  BlurKernel meank;
  meank.size = 11;
  meank.weights = pca.mean;
  std::vector<double> cm = encode(pca, meank);
  double norm = 0;
  for (double v : cm) norm += v * v;
  CHECK(std::sqrt(norm) < 1e-8);

  // fitted threshold bounds the empirical round-trip MSE
  double mse = 0;
  for (const auto& kk : corpus) {
    BlurKernel rt = decode(pca, encode(pca, kk));
    for (int i = 0; i < n; ++i) {
      double d = rt.weights[static_cast<size_t>(i)] - kk.weights[static_cast<size_t>(i)];
      mse += d * d;
    }
  }
  mse /= static_cast<double>(corpus.size() * n);
  CHECK(mse <= pca.recon_mse_threshold);
}

TEST_CASE("PCA degenerate and full-rank cases") {
  // all-identical corpus: zero variance, exact reconstruction for any d
  std::vector<BlurKernel> same(12, make_isotropic(7, 1.5));
  for (int d : {0, 3, 10}) {
    KernelPCA pca = fit_pca(same, d);
    BlurKernel rt = decode(pca, encode(pca, same[0]));
    for (int i = 0; i < 49; ++i)
      CHECK(std::abs(rt.weights[static_cast<size_t>(i)] -
                     same[0].weights[static_cast<size_t>(i)]) < 1e-12);
  }

  // full basis d = size^2 is lossless
  auto corpus = pca_training_corpus(120, 7, 5);
  KernelPCA pca = fit_pca(corpus, 49);
  for (int s = 0; s < 10; ++s) {
    BlurKernel rt = decode(pca, encode(pca, corpus[static_cast<size_t>(s)]));
    for (int i = 0; i < 49; ++i)
      CHECK(std::abs(rt.weights[static_cast<size_t>(i)] -
                     corpus[static_cast<size_t>(s)].weights[static_cast<size_t>(i)]) <
            1e-10);
  }

  CHECK_THROWS(fit_pca(corpus, 50));                      // d > size^2
  corpus.resize(5);
  CHECK_THROWS(fit_pca(corpus, 20));                      // fewer samples than d
  CHECK_THROWS(decode(pca, std::vector<double>(3, 0.0))); // length mismatch
}

#ifdef BLINDSR_HAVE_EIGEN
TEST_CASE("round-trip MSE matches the eigen-spectrum tail (oracle)") {
  auto corpus = pca_training_corpus(800, 11, 9);
  const int n = 121, d = 10;
  KernelPCA pca = fit_pca(corpus, d);

  // independent oracle: Eigen computes the covariance spectrum
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (const auto& k : corpus)
    for (int i = 0; i < n; ++i) mean(i) += k.weights[static_cast<size_t>(i)];
  mean /= static_cast<double>(corpus.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (const auto& k : corpus) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x(i) = k.weights[static_cast<size_t>(i)] - mean(i);
    cov += x * x.transpose();
  }
  cov /= static_cast<double>(corpus.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  double tail = 0;  // eigenvalues ascending: the n-d smallest are the tail
  for (int i = 0; i < n - d; ++i) tail += std::max(es.eigenvalues()(i), 0.0);
  double tail_mse = tail / n;

  // the subspace round-trip (encode + linear reconstruction) realizes the
  // tail bound exactly; the clamped decode stays within its fitted margin
  double mse_lin = 0, mse_clamped = 0;
  for (const auto& k : corpus) {
    std::vector<double> c = encode(pca, k);
    std::vector<double> lin = decode_linear(pca, c);
    BlurKernel rt = decode(pca, c);
    for (int i = 0; i < n; ++i) {
      double dl = lin[static_cast<size_t>(i)] - k.weights[static_cast<size_t>(i)];
      double dc = rt.weights[static_cast<size_t>(i)] - k.weights[static_cast<size_t>(i)];
      mse_lin += dl * dl;
      mse_clamped += dc * dc;
    }
  }
  mse_lin /= static_cast<double>(corpus.size() * n);
  mse_clamped /= static_cast<double>(corpus.size() * n);

  CHECK(mse_lin <= tail_mse * 1.05);
  CHECK(mse_lin >= tail_mse * 0.95);
  CHECK(mse_clamped <= pca.recon_mse_threshold);
}
#endif

TEST_CASE("kernel and PCA files round-trip bit-exactly") {
  Rng rng(13);
  BlurKernel k = make_anisotropic(11, 1.9, 3.3, -0.4, 0.2, rng);
  std::string kp = "/tmp/bsr_test_kernel.bdk";
  save_kernel(kp, k);
  BlurKernel k2 = load_kernel(kp);
  CHECK(k2.size == k.size);
  CHECK(k2.weights == k.weights);
  CHECK(k2.meta.family == k.meta.family);
  CHECK(k2.meta.sigma_x == k.meta.sigma_x);
  CHECK(k2.meta.theta == k.meta.theta);
  std::remove(kp.c_str());

  KernelPCA pca = fit_pca(pca_training_corpus(60, 7, 2), 5);
  std::string pp = "/tmp/bsr_test_pca.bdp";
  save_pca(pp, pca);
  KernelPCA p2 = load_pca(pp);
  CHECK(p2.dim == pca.dim);
  CHECK(p2.size == pca.size);
  CHECK(p2.mean == pca.mean);
  CHECK(p2.basis == pca.basis);
  CHECK(p2.recon_mse_threshold == pca.recon_mse_threshold);
  std::remove(pp.c_str());
}
