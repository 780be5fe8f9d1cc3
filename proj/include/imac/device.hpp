#pragma once

// SOT-MRAM / MTJ resistance model. Every conductance used by the circuit,
// crossbar and netlist code is evaluated here.

namespace imac {

struct DeviceParams {
  double ra_product = 10.0;  // Ω·µm²
  double tmr0 = 200.0;       // percent
  double v0 = 0.65;          // V
  double mtj_length = 50.0;  // nm
  double mtj_width = 30.0;   // nm
  // Heavy-metal strip l×w×t (nm). Only the write path uses it, which is not modeled.
  double hm_length = 100.0;
  double hm_width = 50.0;
  double hm_thickness = 3.0;

  // Elliptical MTJ area in µm².
  double area_um2() const;
  // Throws InvalidParameter if any field is not strictly positive.
  void validate() const;
};

enum class Orientation { P, AP };

struct DeviceState {
  Orientation orientation = Orientation::P;
};

struct BiasPoint {
  double v_b = 0.0;  // V
};

// R_MTJ = RA / area, in Ω.
double base_resistance(const DeviceParams& params);

// Bias-dependent TMR ratio: (tmr0/100) / (1 + (v_b/v0)^2).
double tmr_at_bias(const DeviceParams& params, BiasPoint bias);

// Angle-dependent junction resistance; θ = 0 for P and π for AP.
double resistance(const DeviceParams& params, DeviceState state, BiasPoint bias);

double conductance(const DeviceParams& params, DeviceState state, BiasPoint bias);

inline const char* to_string(Orientation o) { return o == Orientation::P ? "P" : "AP"; }

}  // namespace imac
