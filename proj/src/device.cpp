#include "imac/device.hpp"

#include <cmath>
#include <numbers>

#include "imac/error.hpp"

namespace imac {

double DeviceParams::area_um2() const {
  constexpr double kNmToUm = 1e-3;
  return (mtj_length * kNmToUm) * (mtj_width * kNmToUm) * std::numbers::pi / 4.0;
}

void DeviceParams::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(ra_product) || !positive(tmr0) || !positive(v0))
    throw InvalidParameter("device: RA, TMR0 and V0 must be strictly positive");
  if (!positive(mtj_length) || !positive(mtj_width))
    throw InvalidParameter("device: MTJ dimensions must be strictly positive");
  if (!positive(hm_length) || !positive(hm_width) || !positive(hm_thickness))
    throw InvalidParameter("device: heavy-metal dimensions must be strictly positive");
  if (!(area_um2() > 0.0)) throw InvalidParameter("device: MTJ area underflows to zero");
}

double base_resistance(const DeviceParams& params) {
  params.validate();
  return params.ra_product / params.area_um2();
}

double tmr_at_bias(const DeviceParams& params, BiasPoint bias) {
  params.validate();
  if (!std::isfinite(bias.v_b)) throw InvalidParameter("device: bias voltage must be finite");
  const double r = bias.v_b / params.v0;
  return (params.tmr0 / 100.0) / (1.0 + r * r);
}

double resistance(const DeviceParams& params, DeviceState state, BiasPoint bias) {
  const double r_mtj = base_resistance(params);
  // At θ = 0 the general expression 2R(1+TMR)/(2+TMR(1+cosθ)) collapses to R_MTJ;
  // evaluating the closed forms keeps R_P exact for any parameter set.
  if (state.orientation == Orientation::P) return r_mtj;
  return r_mtj * (1.0 + tmr_at_bias(params, bias));
}

double conductance(const DeviceParams& params, DeviceState state, BiasPoint bias) {
  return 1.0 / resistance(params, state, bias);
}

}  // namespace imac
