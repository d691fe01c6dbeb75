#include "s2p/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include <fftw3.h>

#include "s2p/error.hpp"

namespace s2p::met {

namespace {

// [H, W] luminance on the unit scale
Tensor gray_unit(const img::ImageTensor& image) {
  img::validate(image);
  img::ImageTensor unit = image.tag == img::RangeTag::unit
                              ? image
                              : img::convert_range(image, img::RangeTag::unit);
  return img::to_gray(unit);
}

// [H, W] luminance on the 0..255 scale
Tensor gray255(const img::ImageTensor& image) {
  Tensor g = gray_unit(image);
  double* p = g.mutable_data();
  for (std::size_t i = 0; i < g.numel(); ++i) p[i] *= 255.0;
  return g;
}

void check_same_geometry(const img::ImageTensor& a, const img::ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw PreconditionError("metric inputs must share dimensions");
}

std::vector<double> gaussian_kernel(int n, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(n));
  double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// separable 'valid' filtering with a symmetric 1-d kernel
Tensor filter_valid(const Tensor& x, const std::vector<double>& k) {
  int h = x.dim(0), w = x.dim(1), n = static_cast<int>(k.size());
  int oh = h - n + 1, ow = w - n + 1;
  if (oh < 1 || ow < 1)
    throw PreconditionError("image too small for the filter window");
  Tensor rows({h, ow});
  const double* src = x.data();
  double* rp = rows.mutable_data();
  for (int y = 0; y < h; ++y)
    for (int ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        acc += k[static_cast<std::size_t>(i)] *
               src[static_cast<std::size_t>(y) * w + ox + i];
      rp[static_cast<std::size_t>(y) * ow + ox] = acc;
    }
  Tensor out({oh, ow});
  double* op = out.mutable_data();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        acc += k[static_cast<std::size_t>(i)] *
               rp[static_cast<std::size_t>(oy + i) * ow + ox];
      op[static_cast<std::size_t>(oy) * ow + ox] = acc;
    }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  return out;
}

// 'same' convolution with zero padding and an arbitrary 2-d kernel
Tensor conv_same(const Tensor& x, const std::vector<double>& k, int kh, int kw) {
  int h = x.dim(0), w = x.dim(1);
  Tensor out({h, w});
  const double* src = x.data();
  double* op = out.mutable_data();
  int ch = kh / 2, cw = kw / 2;
  for (int y = 0; y < h; ++y)
    for (int x0 = 0; x0 < w; ++x0) {
      double acc = 0.0;
      for (int i = 0; i < kh; ++i) {
        int sy = y + i - ch;
        if (sy < 0 || sy >= h) continue;
        for (int j = 0; j < kw; ++j) {
          int sx = x0 + j - cw;
          if (sx < 0 || sx >= w) continue;
          // convolution flips the kernel
          acc += k[static_cast<std::size_t>(kh - 1 - i) * kw + (kw - 1 - j)] *
                 src[static_cast<std::size_t>(sy) * w + sx];
        }
      }
      op[static_cast<std::size_t>(y) * w + x0] = acc;
    }
  return out;
}

Tensor decimate2(const Tensor& x) {
  int h = x.dim(0), w = x.dim(1);
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out({oh, ow});
  const double* src = x.data();
  double* op = out.mutable_data();
  for (int y = 0; y < oh; ++y)
    for (int x0 = 0; x0 < ow; ++x0)
      op[static_cast<std::size_t>(y) * ow + x0] =
          src[static_cast<std::size_t>(2 * y) * w + 2 * x0];
  return out;
}

}  // namespace

double ssim(const img::ImageTensor& a, const img::ImageTensor& b) {
  check_same_geometry(a, b);
  Tensor x = gray_unit(a);
  Tensor y = gray_unit(b);
  const double c1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
  const double c2 = 0.03 * 0.03;

  std::vector<double> win = gaussian_kernel(11, 1.5);

  Tensor mu1 = filter_valid(x, win);
  Tensor mu2 = filter_valid(y, win);
  Tensor xx = filter_valid(hadamard(x, x), win);
  Tensor yy = filter_valid(hadamard(y, y), win);
  Tensor xy = filter_valid(hadamard(x, y), win);

  const double* m1 = mu1.data();
  const double* m2 = mu2.data();
  const double* sxx = xx.data();
  const double* syy = yy.data();
  const double* sxy = xy.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < mu1.numel(); ++i) {
    double mu1s = m1[i] * m1[i], mu2s = m2[i] * m2[i], mu12 = m1[i] * m2[i];
    double s1 = sxx[i] - mu1s, s2 = syy[i] - mu2s, s12 = sxy[i] - mu12;
    acc += ((2.0 * mu12 + c1) * (2.0 * s12 + c2)) /
           ((mu1s + mu2s + c1) * (s1 + s2 + c2));
  }
  return acc / static_cast<double>(mu1.numel());
}

// ---------------------------------------------------------------------------
// FSIM

namespace {

struct Fft2 {
  int rows, cols;
  std::vector<std::complex<double>> buf;

  explicit Fft2(int r, int c) : rows(r), cols(c), buf(static_cast<std::size_t>(r) * c) {}

  void forward(const double* src) {
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {src[i], 0.0};
    run(FFTW_FORWARD);
  }

  // multiplies the spectrum by a real filter and inverse-transforms
  std::vector<std::complex<double>> filtered_inverse(
      const std::vector<double>& filt) const {
    std::vector<std::complex<double>> tmp(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) tmp[i] = buf[i] * filt[i];
    run_on(tmp, FFTW_BACKWARD);
    double scale = 1.0 / (static_cast<double>(rows) * cols);
    for (auto& v : tmp) v *= scale;
    return tmp;
  }

  static std::vector<double> real_inverse(std::vector<double> filt, int rows,
                                          int cols) {
    std::vector<std::complex<double>> tmp(filt.size());
    for (std::size_t i = 0; i < filt.size(); ++i) tmp[i] = {filt[i], 0.0};
    run_on_static(tmp, rows, cols, FFTW_BACKWARD);
    double scale = 1.0 / (static_cast<double>(rows) * cols);
    std::vector<double> out(filt.size());
    // real(ifft2(filter)) * sqrt(rows*cols)
    double amp = std::sqrt(static_cast<double>(rows) * cols);
    for (std::size_t i = 0; i < filt.size(); ++i)
      out[i] = tmp[i].real() * scale * amp;
    return out;
  }

 private:
  void run(int sign) { run_on_static(buf, rows, cols, sign); }
  void run_on(std::vector<std::complex<double>>& data, int sign) const {
    run_on_static(data, rows, cols, sign);
  }
  static void run_on_static(std::vector<std::complex<double>>& data, int rows,
                            int cols, int sign) {
    fftw_plan plan = fftw_plan_dft_2d(
        rows, cols, reinterpret_cast<fftw_complex*>(data.data()),
        reinterpret_cast<fftw_complex*>(data.data()), sign, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }
};

double median_of(std::vector<double> v) {
  std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// frequency coordinate in MATLAB's ifftshift(meshgrid) convention: odd sizes
// divide by (n-1), even by n
double freq_coord(int u, int n) {
  int half = (n + 1) / 2;
  double num = u < half ? u : u - n;
  return num / static_cast<double>(n % 2 ? n - 1 : n);
}

}  // namespace

Tensor phase_congruency(const Tensor& gray) {
  if (gray.ndim() != 2)
    throw PreconditionError("phase congruency expects a [H, W] tensor");
  const int rows = gray.dim(0), cols = gray.dim(1);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  const int nscale = 4, norient = 4;
  const double min_wavelength = 6.0, mult = 2.0, sigma_onf = 0.55;
  const double d_theta_on_sigma = 1.2, k = 2.0, epsilon = 1e-4;
  const double theta_sigma = M_PI / norient / d_theta_on_sigma;

  // radial / angular grids in frequency order
  std::vector<double> radius(n), sin_t(n), cos_t(n), lp(n);
  for (int y = 0; y < rows; ++y) {
    double fy = freq_coord(y, rows);
    for (int x = 0; x < cols; ++x) {
      double fx = freq_coord(x, cols);
      std::size_t i = static_cast<std::size_t>(y) * cols + x;
      double r = std::sqrt(fx * fx + fy * fy);
      lp[i] = 1.0 / (1.0 + std::pow(r / 0.45, 30.0));  // 15th order butterworth
      double th = std::atan2(-fy, fx);
      sin_t[i] = std::sin(th);
      cos_t[i] = std::cos(th);
      radius[i] = r;
    }
  }
  radius[0] = 1.0;  // keeps log(r) finite; the DC gain is zeroed anyway

  std::vector<std::vector<double>> log_gabor(nscale, std::vector<double>(n));
  double log_sigma = std::log(sigma_onf);
  for (int s = 0; s < nscale; ++s) {
    double fo = 1.0 / (min_wavelength * std::pow(mult, s));
    for (std::size_t i = 0; i < n; ++i) {
      double lr = std::log(radius[i] / fo);
      log_gabor[static_cast<std::size_t>(s)][i] =
          std::exp(-lr * lr / (2.0 * log_sigma * log_sigma)) * lp[i];
    }
    log_gabor[static_cast<std::size_t>(s)][0] = 0.0;
  }

  Fft2 fft(rows, cols);
  fft.forward(gray.data());

  std::vector<double> energy_all(n, 0.0), an_all(n, 0.0);
  for (int o = 0; o < norient; ++o) {
    double angl = o * M_PI / norient;
    double ca = std::cos(angl), sa = std::sin(angl);
    std::vector<double> spread(n);
    for (std::size_t i = 0; i < n; ++i) {
      double ds = sin_t[i] * ca - cos_t[i] * sa;
      double dc = cos_t[i] * ca + sin_t[i] * sa;
      double dtheta = std::abs(std::atan2(ds, dc));
      spread[i] = std::exp(-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma));
    }

    std::vector<double> sum_e(n, 0.0), sum_o(n, 0.0), sum_an(n, 0.0);
    std::vector<std::vector<std::complex<double>>> eo(nscale);
    std::vector<std::vector<double>> ifft_filt(nscale);
    double em_n = 0.0;
    for (int s = 0; s < nscale; ++s) {
      std::vector<double> filt(n);
      for (std::size_t i = 0; i < n; ++i)
        filt[i] = log_gabor[static_cast<std::size_t>(s)][i] * spread[i];
      if (s == 0)
        for (double f : filt) em_n += f * f;
      ifft_filt[static_cast<std::size_t>(s)] = Fft2::real_inverse(filt, rows, cols);
      eo[static_cast<std::size_t>(s)] = fft.filtered_inverse(filt);
      for (std::size_t i = 0; i < n; ++i) {
        const std::complex<double>& v = eo[static_cast<std::size_t>(s)][i];
        sum_e[i] += v.real();
        sum_o[i] += v.imag();
        sum_an[i] += std::abs(v);
      }
    }

    std::vector<double> energy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double xe = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + epsilon;
      double me = sum_e[i] / xe, mo = sum_o[i] / xe;
      for (int s = 0; s < nscale; ++s) {
        double e = eo[static_cast<std::size_t>(s)][i].real();
        double od = eo[static_cast<std::size_t>(s)][i].imag();
        energy[i] += e * me + od * mo - std::abs(e * mo - od * me);
      }
    }

    // noise threshold from the smallest-scale response statistics
    std::vector<double> e2(n);
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::abs(eo[0][i]);
      e2[i] = m * m;
    }
    double mean_e2n = median_of(std::move(e2)) / std::log(2.0);
    double noise_power = mean_e2n / em_n;
    double sum_an2 = 0.0, sum_ai_aj = 0.0;
    for (int s = 0; s < nscale; ++s)
      for (std::size_t i = 0; i < n; ++i) {
        double f = ifft_filt[static_cast<std::size_t>(s)][i];
        sum_an2 += f * f;
      }
    for (int si = 0; si < nscale - 1; ++si)
      for (int sj = si + 1; sj < nscale; ++sj)
        for (std::size_t i = 0; i < n; ++i)
          sum_ai_aj += ifft_filt[static_cast<std::size_t>(si)][i] *
                       ifft_filt[static_cast<std::size_t>(sj)][i];
    double est_noise_energy2 = 2.0 * noise_power * sum_an2 +
                               4.0 * noise_power * sum_ai_aj;
    double tau = std::sqrt(est_noise_energy2 / 2.0);
    double est_noise_energy = tau * std::sqrt(M_PI / 2.0);
    double est_noise_sigma = std::sqrt((2.0 - M_PI / 2.0) * tau * tau);
    double t = (est_noise_energy + k * est_noise_sigma) / 1.7;

    for (std::size_t i = 0; i < n; ++i) {
      energy_all[i] += std::max(energy[i] - t, 0.0);
      an_all[i] += sum_an[i];
    }
  }

  Tensor pc({rows, cols});
  double* out = pc.mutable_data();
  for (std::size_t i = 0; i < n; ++i) out[i] = energy_all[i] / (an_all[i] + epsilon);
  return pc;
}

namespace {

Tensor fsim_downsample(const Tensor& x, int f) {
  if (f <= 1) return x;
  std::vector<double> avg(static_cast<std::size_t>(f) * f,
                          1.0 / (static_cast<double>(f) * f));
  Tensor smoothed = conv_same(x, avg, f, f);
  int h = x.dim(0), w = x.dim(1);
  int oh = (h + f - 1) / f, ow = (w + f - 1) / f;
  Tensor out({oh, ow});
  double* op = out.mutable_data();
  const double* src = smoothed.data();
  for (int y = 0; y < oh; ++y)
    for (int x0 = 0; x0 < ow; ++x0)
      op[static_cast<std::size_t>(y) * ow + x0] =
          src[static_cast<std::size_t>(y * f) * w + x0 * f];
  return out;
}

void scharr(const Tensor& x, Tensor& gm) {
  static const double dx[9] = {3, 0, -3, 10, 0, -10, 3, 0, -3};
  static const double dy[9] = {3, 10, 3, 0, 0, 0, -3, -10, -3};
  std::vector<double> kx(dx, dx + 9), ky(dy, dy + 9);
  for (double& v : kx) v /= 16.0;
  for (double& v : ky) v /= 16.0;
  Tensor gx = conv_same(x, kx, 3, 3);
  Tensor gy = conv_same(x, ky, 3, 3);
  gm = Tensor(x.shape());
  double* out = gm.mutable_data();
  const double* px = gx.data();
  const double* py = gy.data();
  for (std::size_t i = 0; i < gm.numel(); ++i)
    out[i] = std::sqrt(px[i] * px[i] + py[i] * py[i]);
}

}  // namespace

double fsim(const img::ImageTensor& a, const img::ImageTensor& b) {
  check_same_geometry(a, b);
  Tensor x = gray255(a);
  Tensor y = gray255(b);
  int minhw = std::min(x.dim(0), x.dim(1));
  int f = std::max(1, static_cast<int>(std::lround(minhw / 256.0)));
  x = fsim_downsample(x, f);
  y = fsim_downsample(y, f);

  Tensor pc1 = phase_congruency(x);
  Tensor pc2 = phase_congruency(y);
  Tensor g1, g2;
  scharr(x, g1);
  scharr(y, g2);

  const double t1 = 0.85, t2 = 160.0;
  const double* p1 = pc1.data();
  const double* p2 = pc2.data();
  const double* q1 = g1.data();
  const double* q2 = g2.data();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pc1.numel(); ++i) {
    double s_pc = (2.0 * p1[i] * p2[i] + t1) / (p1[i] * p1[i] + p2[i] * p2[i] + t1);
    double s_g = (2.0 * q1[i] * q2[i] + t2) / (q1[i] * q1[i] + q2[i] * q2[i] + t2);
    double pcm = std::max(p1[i], p2[i]);
    num += s_pc * s_g * pcm;
    den += pcm;
  }
  if (den <= 0.0) return 1.0;  // featureless pair carries no structure to compare
  return num / den;
}

// ---------------------------------------------------------------------------
// VIF

double vif(const img::ImageTensor& reference,
           const img::ImageTensor& distorted) {
  check_same_geometry(reference, distorted);
  Tensor ref = gray255(reference);
  Tensor dst = gray255(distorted);
  const double sigma_nsq = 2.0;
  if (ref.dim(0) < 17 || ref.dim(1) < 17)
    throw PreconditionError("image too small for the filter window");
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    int nwin = (1 << (4 - scale + 1)) + 1;  // 17, 9, 5, 3
    std::vector<double> win = gaussian_kernel(nwin, nwin / 5.0);
    if (scale > 1) {
      if (ref.dim(0) < nwin || ref.dim(1) < nwin) break;
      ref = decimate2(filter_valid(ref, win));
      dst = decimate2(filter_valid(dst, win));
    }
    if (ref.dim(0) < nwin || ref.dim(1) < nwin) break;
    Tensor mu1 = filter_valid(ref, win);
    Tensor mu2 = filter_valid(dst, win);
    Tensor rr = filter_valid(hadamard(ref, ref), win);
    Tensor dd = filter_valid(hadamard(dst, dst), win);
    Tensor rd = filter_valid(hadamard(ref, dst), win);
    const double* m1 = mu1.data();
    const double* m2 = mu2.data();
    const double* prr = rr.data();
    const double* pdd = dd.data();
    const double* prd = rd.data();
    for (std::size_t i = 0; i < mu1.numel(); ++i) {
      double s1 = std::max(0.0, prr[i] - m1[i] * m1[i]);
      double s2 = std::max(0.0, pdd[i] - m2[i] * m2[i]);
      double s12 = prd[i] - m1[i] * m2[i];
      double g = s12 / (s1 + 1e-10);
      double sv = s2 - g * s12;
      if (s1 < 1e-10) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < 1e-10) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      if (sv <= 1e-10) sv = 1e-10;
      num += std::log10(1.0 + g * g * s1 / (sv + sigma_nsq));
      den += std::log10(1.0 + s1 / sigma_nsq);
    }
  }
  if (den <= 0.0) return 1.0;  // constant reference: nothing to lose
  return num / den;
}

// ---------------------------------------------------------------------------
// rank-1 recognition

std::string distance_name(Distance d) {
  return d == Distance::euclidean ? "euclidean" : "cosine";
}

Distance distance_from_name(const std::string& s) {
  if (s == "euclidean") return Distance::euclidean;
  if (s == "cosine") return Distance::cosine;
  throw PreconditionError("unknown distance: " + s);
}

namespace {

double cosine_distance(const ext::FeatureVector& a, const ext::FeatureVector& b) {
  if (a.extractor_id != b.extractor_id)
    throw PreconditionError("features come from different extractors");
  if (!a.values.same_shape(b.values))
    throw PreconditionError("feature dimensions differ");
  const double* pa = a.values.data();
  const double* pb = b.values.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.numel(); ++i) {
    dot += pa[i] * pb[i];
    na += pa[i] * pa[i];
    nb += pb[i] * pb[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 1.0;  // undefined direction: maximally dissimilar
  return 1.0 - dot / denom;
}

}  // namespace

RecognitionReport rank1_features(
    const std::vector<std::pair<std::string, ext::FeatureVector>>& gallery,
    const std::vector<std::pair<std::string, ext::FeatureVector>>& probes,
    Distance distance) {
  if (gallery.empty()) throw PreconditionError("gallery is empty");
  if (probes.empty()) throw PreconditionError("no probes to evaluate");
  for (std::size_t i = 0; i < gallery.size(); ++i)
    for (std::size_t j = i + 1; j < gallery.size(); ++j)
      if (gallery[i].first == gallery[j].first)
        throw PreconditionError("duplicate gallery identity: " +
                                gallery[i].first);
  for (const auto& [identity, feat] : probes) {
    bool found = false;
    for (const auto& [gid, gf] : gallery) found = found || gid == identity;
    if (!found)
      throw PreconditionError("probe identity missing from gallery: " + identity);
  }

  RecognitionReport rep;
  rep.distance = distance;
  rep.extractor_id = probes[0].second.extractor_id;
  int correct = 0;
  for (const auto& [identity, feat] : probes) {
    int best = 0;
    double best_d = 0.0;
    for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
      double d = distance == Distance::euclidean
                     ? ext::feature_distance(feat, gallery[gi].second)
                     : cosine_distance(feat, gallery[gi].second);
      if (gi == 0 || d < best_d) {  // strict: ties keep the lowest index
        best = static_cast<int>(gi);
        best_d = d;
      }
    }
    ProbeResult pr;
    pr.probe_identity = identity;
    pr.nearest_identity = gallery[static_cast<std::size_t>(best)].first;
    pr.distance = best_d;
    pr.correct = pr.nearest_identity == identity;
    if (pr.correct) ++correct;
    rep.probes.push_back(std::move(pr));
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(probes.size());
  return rep;
}

RecognitionReport rank1_accuracy(
    const std::vector<std::pair<std::string, img::ImageTensor>>& gallery,
    const std::vector<std::pair<std::string, img::ImageTensor>>& probes,
    const ext::Registry& reg, const std::string& extractor_id,
    Distance distance) {
  std::vector<std::pair<std::string, ext::FeatureVector>> gf, pf;
  gf.reserve(gallery.size());
  pf.reserve(probes.size());
  for (const auto& [identity, image] : gallery)
    gf.emplace_back(identity, reg.extract(image, extractor_id));
  for (const auto& [identity, image] : probes)
    pf.emplace_back(identity, reg.extract(image, extractor_id));
  RecognitionReport rep = rank1_features(gf, pf, distance);
  rep.extractor_id = extractor_id;
  return rep;
}

IqaReport evaluate_iqa(
    const std::vector<std::pair<img::ImageTensor, img::ImageTensor>>& pairs) {
  if (pairs.empty()) throw PreconditionError("no image pairs to evaluate");
  IqaReport rep;
  rep.pairs.reserve(pairs.size());
  for (const auto& [ref, other] : pairs) {
    IqaPair p;
    p.ssim = ssim(ref, other);
    p.fsim = fsim(ref, other);
    p.vif = vif(ref, other);
    rep.mean_ssim += p.ssim;
    rep.mean_fsim += p.fsim;
    rep.mean_vif += p.vif;
    rep.pairs.push_back(p);
  }
  rep.mean_ssim /= static_cast<double>(rep.pairs.size());
  rep.mean_fsim /= static_cast<double>(rep.pairs.size());
  rep.mean_vif /= static_cast<double>(rep.pairs.size());
  return rep;
}

}  // namespace s2p::met
