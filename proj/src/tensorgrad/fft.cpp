#include "fsd/tensorgrad/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace fsd::tg::fft {
namespace {

enum class Kind { Forward, Inverse };

// Plans are created once per (kind, h, w) and reused with the new-array
// execute interface, which is thread safe. Only plan creation is serialized.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(Kind kind, std::size_t h, std::size_t w) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(kind, h, w);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t hw = half_width(w);
    std::vector<double> real(h * w);
    std::vector<cplx> spec(h * hw);
    auto* c = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = kind == Kind::Forward
                         ? fftw_plan_dft_r2c_2d(int(h), int(w), real.data(), c, flags)
                         : fftw_plan_dft_c2r_2d(int(h), int(w), c, real.data(), flags);
    if (!plan) throw std::runtime_error("fft: plan creation failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<Kind, std::size_t, std::size_t>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

}  // namespace

void rfft2(const double* in, std::size_t h, std::size_t w, cplx* out) {
  fftw_plan plan = cache().get(Kind::Forward, h, w);
  fftw_execute_dft_r2c(plan, const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

void irfft2_raw(const cplx* in, std::size_t h, std::size_t w, double* out) {
  const std::size_t hw = half_width(w);
  // c2r destroys its input; work on a Hermitian-projected copy.
  std::vector<cplx> buf(in, in + h * hw);
  auto project_column = [&](std::size_t ky) {
    for (std::size_t kx = 0; kx <= h / 2; ++kx) {
      const std::size_t mx = (h - kx) % h;
      const cplx a = buf[kx * hw + ky];
      const cplx b = buf[mx * hw + ky];
      const cplx sym = 0.5 * (a + std::conj(b));
      buf[kx * hw + ky] = sym;
      buf[mx * hw + ky] = std::conj(sym);
    }
  };
  project_column(0);
  if (w % 2 == 0) project_column(w / 2);
  fftw_plan plan = cache().get(Kind::Inverse, h, w);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(buf.data()), out);
}

void irfft2(const cplx* in, std::size_t h, std::size_t w, double* out) {
  irfft2_raw(in, h, w, out);
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] *= inv;
}

}  // namespace fsd::tg::fft
