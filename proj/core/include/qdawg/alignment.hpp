#pragma once

#include "qdawg/config.hpp"
#include "qdawg/nv_physics.hpp"

namespace qdawg {

/// Operator-controlled alignment state.
struct AlignmentKnobs {
    double stage_x_um = 0.0;
    double stage_y_um = 0.0;
    double stage_z_um = 0.0;
    double magnet_angle_deg = 0.0;  // between bias magnet and NV axis
    double antenna_coupling = 1.0;  // [0, 1]

    /// Throws std::invalid_argument on non-finite values or coupling outside [0, 1].
    void validate() const;

    KvDocument to_kv() const;
    /// Absent keys keep the values in `base`. Throws ParseError on unknown keys.
    static AlignmentKnobs from_kv(const KvDocument& doc, AlignmentKnobs base);
    static AlignmentKnobs from_kv(const KvDocument& doc) { return from_kv(doc, AlignmentKnobs{}); }

    bool operator==(const AlignmentKnobs&) const = default;
};

/// Misalignment couplings:
///   PL rate     x exp(-(r / w)^2), r = |(x, y, z)| stage offset, w = beam waist
///   bias field  x cos(theta), axial projection of the magnet field
///   Rabi rate   x antenna coupling
/// The physics model needs strictly positive rates, so the PL and Rabi factors
/// are floored at 1e-12.
struct AlignmentModel {
    double beam_waist_um = 2.0;

    double pl_factor(const AlignmentKnobs& k) const;
    double field_factor(const AlignmentKnobs& k) const;
    double rabi_factor(const AlignmentKnobs& k) const;

    /// Pure: equal inputs give equal outputs.
    NvEnsembleParams apply(const NvEnsembleParams& aligned, const AlignmentKnobs& k) const;

    bool operator==(const AlignmentModel&) const = default;
};

}  // namespace qdawg
