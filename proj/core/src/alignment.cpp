#include "qdawg/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qdawg {

namespace {

constexpr double kFloor = 1e-12;

double scalar_of(const ConfigValue& v, const std::string& key) {
    if (v.quantity == Quantity::Word) throw ParseError("alignment key '" + key + "' needs a number");
    return v.number;
}

}  // namespace

void AlignmentKnobs::validate() const {
    for (double v : {stage_x_um, stage_y_um, stage_z_um, magnet_angle_deg, antenna_coupling})
        if (!std::isfinite(v)) throw std::invalid_argument("alignment knobs must be finite");
    if (antenna_coupling < 0.0 || antenna_coupling > 1.0)
        throw std::invalid_argument("antenna_coupling must lie in [0, 1]");
}

KvDocument AlignmentKnobs::to_kv() const {
    KvDocument d;
    d.set("stage_x_um", ConfigValue::scalar(stage_x_um));
    d.set("stage_y_um", ConfigValue::scalar(stage_y_um));
    d.set("stage_z_um", ConfigValue::scalar(stage_z_um));
    d.set("magnet_angle", ConfigValue::phase(magnet_angle_deg));
    d.set("antenna_coupling", ConfigValue::scalar(antenna_coupling));
    return d;
}

AlignmentKnobs AlignmentKnobs::from_kv(const KvDocument& doc, AlignmentKnobs k) {
    for (const auto& [key, v] : doc.entries()) {
        if (key == "stage_x_um") k.stage_x_um = scalar_of(v, key);
        else if (key == "stage_y_um") k.stage_y_um = scalar_of(v, key);
        else if (key == "stage_z_um") k.stage_z_um = scalar_of(v, key);
        else if (key == "magnet_angle") k.magnet_angle_deg = scalar_of(v, key);
        else if (key == "antenna_coupling") k.antenna_coupling = scalar_of(v, key);
        else throw ParseError("unknown alignment key '" + key + "'");
    }
    return k;
}

double AlignmentModel::pl_factor(const AlignmentKnobs& k) const {
    const double r2 = k.stage_x_um * k.stage_x_um + k.stage_y_um * k.stage_y_um + k.stage_z_um * k.stage_z_um;
    return std::max(std::exp(-r2 / (beam_waist_um * beam_waist_um)), kFloor);
}

double AlignmentModel::field_factor(const AlignmentKnobs& k) const {
    return std::cos(k.magnet_angle_deg * std::numbers::pi / 180.0);
}

double AlignmentModel::rabi_factor(const AlignmentKnobs& k) const { return std::max(k.antenna_coupling, kFloor); }

NvEnsembleParams AlignmentModel::apply(const NvEnsembleParams& aligned, const AlignmentKnobs& k) const {
    k.validate();
    if (!(beam_waist_um > 0.0) || !std::isfinite(beam_waist_um)) throw std::invalid_argument("beam waist must be positive");
    NvEnsembleParams p = aligned;
    p.pl_rate_bright_hz *= pl_factor(k);
    p.bias_field_t *= field_factor(k);
    p.rabi_rate_hz *= rabi_factor(k);
    return p;
}

}  // namespace qdawg
