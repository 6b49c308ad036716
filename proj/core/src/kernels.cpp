#include "blindsr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

constexpr double kPi = 3.14159265358979323846;

void normalize_sum1(std::vector<double>& w) {
  double s = std::accumulate(w.begin(), w.end(), 0.0);
  BSR_CHECK(s > 0.0, "kernel mass must be positive");
  double inv = 1.0 / s;
  for (double& v : w) v *= inv;
}

}  // namespace

double BlurKernel::sum() const {
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

BlurKernel make_isotropic(int size, double sigma) {
  BSR_CHECK(size % 2 == 1, "kernel size must be odd, got " << size);
  BSR_CHECK(sigma > 0.0, "sigma must be positive, got " << sigma);
  BlurKernel k;
  k.size = size;
  k.weights.resize(static_cast<size_t>(size) * size);
  int c = size / 2;
  double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      double di = i - c, dj = j - c;
      k.weights[static_cast<size_t>(i * size + j)] =
          std::exp(-(di * di + dj * dj) * inv2s2);
    }
  }
  normalize_sum1(k.weights);
  k.meta = {KernelFamily::Isotropic, sigma, sigma, 0.0, 0.0};
  return k;
}

BlurKernel make_anisotropic(int size, double sigma_x, double sigma_y,
                            double theta, double noise_amp, Rng& rng) {
  BSR_CHECK(size % 2 == 1, "kernel size must be odd, got " << size);
  BSR_CHECK(sigma_x > 0.0 && sigma_y > 0.0, "sigmas must be positive");
  BSR_CHECK(noise_amp >= 0.0 && noise_amp <= 0.25,
            "noise_amp must be in [0, 0.25], got " << noise_amp);
  // Sigma = R diag(sx^2, sy^2) R^T; we need its inverse for the density.
  double ct = std::cos(theta), st = std::sin(theta);
  double isx2 = 1.0 / (sigma_x * sigma_x), isy2 = 1.0 / (sigma_y * sigma_y);
  // inv(Sigma) = R diag(1/sx^2, 1/sy^2) R^T
  double a = ct * ct * isx2 + st * st * isy2;
  double b = ct * st * (isx2 - isy2);
  double d = st * st * isx2 + ct * ct * isy2;

  BlurKernel k;
  k.size = size;
  k.weights.resize(static_cast<size_t>(size) * size);
  int c = size / 2;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      // x is the horizontal offset (column), y the vertical one (row)
      double x = j - c, y = i - c;
      double q = a * x * x + 2.0 * b * x * y + d * y * y;
      k.weights[static_cast<size_t>(i * size + j)] = std::exp(-0.5 * q);
    }
  }
  if (noise_amp > 0.0) {
    for (double& v : k.weights) v *= rng.uniform(1.0 - noise_amp, 1.0 + noise_amp);
  }
  normalize_sum1(k.weights);
  k.meta = {KernelFamily::Anisotropic, sigma_x, sigma_y, theta, noise_amp};
  return k;
}

std::vector<BlurKernel> sample_gaussian8() {
  std::vector<BlurKernel> out;
  out.reserve(8);
  for (int i = 0; i < 8; ++i) out.push_back(make_isotropic(21, 1.8 + 0.2 * i));
  return out;
}

BlurKernel sample_training_kernel(KernelFamily family, int size, Rng& rng) {
  if (family == KernelFamily::Isotropic) {
    return make_isotropic(size, rng.uniform(0.2, 4.0));
  }
  double sx = rng.uniform(0.6, 5.0);
  double sy = rng.uniform(0.6, 5.0);
  double theta = rng.uniform(-kPi, kPi);
  return make_anisotropic(size, sx, sy, theta, 0.25, rng);
}

std::vector<BlurKernel> pca_training_corpus(int count, int size, uint64_t seed) {
  Rng rng = Rng(seed).split("pca-corpus");
  std::vector<BlurKernel> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    KernelFamily f = (i % 2 == 0) ? KernelFamily::Isotropic
                                  : KernelFamily::Anisotropic;
    out.push_back(sample_training_kernel(f, size, rng));
  }
  return out;
}

// ---- eigendecomposition ------------------------------------------------------

void symmetric_eig(const std::vector<double>& a_in, int n,
                   std::vector<double>& eigenvalues,
                   std::vector<double>& eigenvectors) {
  BSR_CHECK(static_cast<int>(a_in.size()) == n * n, "symmetric_eig: bad size");
  std::vector<double> a(a_in);
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };

  double frob = 0.0;
  for (double x : a) frob += x * x;
  frob = std::sqrt(frob);
  const double tol = 1e-14 * std::max(frob, 1e-300);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (std::sqrt(2.0 * off) <= tol) break;

    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = at(p, q);
        if (std::abs(apq) <= tol / n) continue;
        double app = at(p, p), aqq = at(q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = t * cs;
        // rotate rows/cols p and q of A
        for (int i = 0; i < n; ++i) {
          double aip = at(i, p), aiq = at(i, q);
          at(i, p) = cs * aip - sn * aiq;
          at(i, q) = sn * aip + cs * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = at(p, i), aqi = at(q, i);
          at(p, i) = cs * api - sn * aqi;
          at(q, i) = sn * api + cs * aqi;
        }
        // accumulate eigenvectors (rows of v)
        double* vp = v.data() + static_cast<size_t>(p) * n;
        double* vq = v.data() + static_cast<size_t>(q) * n;
        for (int i = 0; i < n; ++i) {
          double vpi = vp[i], vqi = vq[i];
          vp[i] = cs * vpi - sn * vqi;
          vq[i] = sn * vpi + cs * vqi;
        }
      }
    }
  }

  // sort descending by eigenvalue, fix sign so the largest-|.| entry is +
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = at(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return diag[static_cast<size_t>(x)] > diag[static_cast<size_t>(y)]; });

  eigenvalues.resize(static_cast<size_t>(n));
  eigenvectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    int src = order[static_cast<size_t>(r)];
    eigenvalues[static_cast<size_t>(r)] = diag[static_cast<size_t>(src)];
    const double* vrow = v.data() + static_cast<size_t>(src) * n;
    double* drow = eigenvectors.data() + static_cast<size_t>(r) * n;
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < n; ++i) {
      if (std::abs(vrow[i]) > best) {
        best = std::abs(vrow[i]);
        arg = i;
      }
    }
    double sgn = vrow[arg] >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) drow[i] = sgn * vrow[i];
  }
}

// ---- PCA ---------------------------------------------------------------------

KernelPCA fit_pca(const std::vector<BlurKernel>& kernels, int d) {
  BSR_CHECK(!kernels.empty(), "fit_pca: empty corpus");
  int size = kernels[0].size;
  int n = size * size;
  BSR_CHECK(d >= 0 && d <= n, "fit_pca: d " << d << " exceeds size^2 " << n);
  BSR_CHECK(static_cast<int>(kernels.size()) >= std::max(d, 1),
            "fit_pca: fewer samples than components");
  for (const auto& k : kernels)
    BSR_CHECK(k.size == size, "fit_pca: mixed kernel sizes");

  size_t N = kernels.size();
  std::vector<double> mean(static_cast<size_t>(n), 0.0);
  for (const auto& k : kernels)
    for (int i = 0; i < n; ++i) mean[static_cast<size_t>(i)] += k.weights[static_cast<size_t>(i)];
  for (double& m : mean) m /= static_cast<double>(N);

  // covariance C = (1/N) sum (k - mean)(k - mean)^T, upper triangle then mirror
  std::vector<double> cov(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> centered(static_cast<size_t>(n));
  for (const auto& k : kernels) {
    for (int i = 0; i < n; ++i)
      centered[static_cast<size_t>(i)] = k.weights[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
    for (int i = 0; i < n; ++i) {
      double ci = centered[static_cast<size_t>(i)];
      if (ci == 0.0) continue;
      double* row = cov.data() + static_cast<size_t>(i) * n;
      for (int j = i; j < n; ++j) row[j] += ci * centered[static_cast<size_t>(j)];
    }
  }
  double invN = 1.0 / static_cast<double>(N);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double vij = cov[static_cast<size_t>(i) * n + j] * invN;
      cov[static_cast<size_t>(i) * n + j] = vij;
      cov[static_cast<size_t>(j) * n + i] = vij;
    }

  std::vector<double> evals, evecs;
  symmetric_eig(cov, n, evals, evecs);

  KernelPCA pca;
  pca.size = size;
  pca.dim = d;
  pca.mean = std::move(mean);
  pca.basis.assign(evecs.begin(), evecs.begin() + static_cast<size_t>(d) * n);

  // fit the threshold to the measured clamped round-trip (the clamp and
  // renormalization sit on top of the pure projection, whose MSE is the
  // eigenvalue tail)
  double mse = 0.0;
  for (const auto& k : kernels) {
    BlurKernel rt = decode(pca, encode(pca, k));
    for (int i = 0; i < n; ++i) {
      double diff = rt.weights[static_cast<size_t>(i)] - k.weights[static_cast<size_t>(i)];
      mse += diff * diff;
    }
  }
  mse /= static_cast<double>(N) * n;
  pca.recon_mse_threshold = 1.05 * mse;
  return pca;
}

std::vector<double> decode_linear(const KernelPCA& pca,
                                  const std::vector<double>& code) {
  BSR_CHECK(static_cast<int>(code.size()) == pca.dim,
            "decode_linear: code length " << code.size() << " != d " << pca.dim);
  int n = pca.size * pca.size;
  std::vector<double> out = pca.mean;
  for (int r = 0; r < pca.dim; ++r) {
    double c = code[static_cast<size_t>(r)];
    if (c == 0.0) continue;
    const double* brow = pca.basis.data() + static_cast<size_t>(r) * n;
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] += c * brow[i];
  }
  return out;
}

std::vector<double> encode(const KernelPCA& pca, const BlurKernel& k) {
  int n = pca.size * pca.size;
  BSR_CHECK(k.size == pca.size, "encode: kernel size " << k.size
                                                       << " != PCA size "
                                                       << pca.size);
  std::vector<double> code(static_cast<size_t>(pca.dim), 0.0);
  for (int r = 0; r < pca.dim; ++r) {
    const double* brow = pca.basis.data() + static_cast<size_t>(r) * n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += brow[i] * (k.weights[static_cast<size_t>(i)] - pca.mean[static_cast<size_t>(i)]);
    code[static_cast<size_t>(r)] = acc;
  }
  return code;
}

BlurKernel decode(const KernelPCA& pca, const std::vector<double>& code) {
  BSR_CHECK(static_cast<int>(code.size()) == pca.dim,
            "decode: code length " << code.size() << " != d " << pca.dim);
  int n = pca.size * pca.size;
  BlurKernel k;
  k.size = pca.size;
  k.weights = pca.mean;
  for (int r = 0; r < pca.dim; ++r) {
    double c = code[static_cast<size_t>(r)];
    if (c == 0.0) continue;
    const double* brow = pca.basis.data() + static_cast<size_t>(r) * n;
    for (int i = 0; i < n; ++i) k.weights[static_cast<size_t>(i)] += c * brow[i];
  }
  for (double& v : k.weights) v = std::max(v, 0.0);
  normalize_sum1(k.weights);
  return k;
}

// ---- file formats -------------------------------------------------------------

namespace {

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  BSR_CHECK(is.good(), "kernel file: truncated");
  return v;
}

const char* family_name(KernelFamily f) {
  return f == KernelFamily::Isotropic ? "iso" : "aniso";
}

}  // namespace

void save_kernel(const std::string& path, const BlurKernel& k) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.write("BDK1", 4);
  write_pod<uint16_t>(os, static_cast<uint16_t>(k.size));
  os.write(reinterpret_cast<const char*>(k.weights.data()),
           static_cast<std::streamsize>(k.weights.size() * sizeof(double)));
  std::ostringstream meta;
  meta.precision(17);
  meta << "family=" << family_name(k.meta.family) << "\n"
       << "sigma_x=" << k.meta.sigma_x << "\n"
       << "sigma_y=" << k.meta.sigma_y << "\n"
       << "theta=" << k.meta.theta << "\n"
       << "noise_amp=" << k.meta.noise_amp << "\n";
  std::string m = meta.str();
  write_pod<uint32_t>(os, static_cast<uint32_t>(m.size()));
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  BSR_CHECK(os.good(), "write failure: " << path);
}

BlurKernel load_kernel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  BSR_CHECK(is.is_open(), "cannot open: " << path);
  char magic[4];
  is.read(magic, 4);
  BSR_CHECK(is.good() && std::memcmp(magic, "BDK1", 4) == 0,
            "not a BDK1 file: " << path);
  BlurKernel k;
  k.size = read_pod<uint16_t>(is);
  k.weights.resize(static_cast<size_t>(k.size) * k.size);
  is.read(reinterpret_cast<char*>(k.weights.data()),
          static_cast<std::streamsize>(k.weights.size() * sizeof(double)));
  uint32_t mlen = read_pod<uint32_t>(is);
  std::string meta(mlen, '\0');
  is.read(meta.data(), mlen);
  BSR_CHECK(is.good(), "BDK1: truncated file " << path);
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "family")
      k.meta.family = (val == "aniso") ? KernelFamily::Anisotropic
                                       : KernelFamily::Isotropic;
    else if (key == "sigma_x")
      k.meta.sigma_x = std::stod(val);
    else if (key == "sigma_y")
      k.meta.sigma_y = std::stod(val);
    else if (key == "theta")
      k.meta.theta = std::stod(val);
    else if (key == "noise_amp")
      k.meta.noise_amp = std::stod(val);
  }
  return k;
}

void save_pca(const std::string& path, const KernelPCA& pca) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.write("BDP1", 4);
  write_pod<uint32_t>(os, static_cast<uint32_t>(pca.dim));
  write_pod<uint16_t>(os, static_cast<uint16_t>(pca.size));
  write_pod<double>(os, pca.recon_mse_threshold);
  os.write(reinterpret_cast<const char*>(pca.mean.data()),
           static_cast<std::streamsize>(pca.mean.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(pca.basis.data()),
           static_cast<std::streamsize>(pca.basis.size() * sizeof(double)));
  BSR_CHECK(os.good(), "write failure: " << path);
}

KernelPCA load_pca(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  BSR_CHECK(is.is_open(), "cannot open: " << path);
  char magic[4];
  is.read(magic, 4);
  BSR_CHECK(is.good() && std::memcmp(magic, "BDP1", 4) == 0,
            "not a BDP1 file: " << path);
  KernelPCA pca;
  pca.dim = static_cast<int>(read_pod<uint32_t>(is));
  pca.size = read_pod<uint16_t>(is);
  pca.recon_mse_threshold = read_pod<double>(is);
  int n = pca.size * pca.size;
  pca.mean.resize(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(pca.mean.data()),
          static_cast<std::streamsize>(pca.mean.size() * sizeof(double)));
  pca.basis.resize(static_cast<size_t>(pca.dim) * n);
  is.read(reinterpret_cast<char*>(pca.basis.data()),
          static_cast<std::streamsize>(pca.basis.size() * sizeof(double)));
  BSR_CHECK(is.good(), "BDP1: truncated file " << path);
  return pca;
}

}  // namespace blindsr
