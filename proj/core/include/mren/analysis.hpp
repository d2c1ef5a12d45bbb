#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mren/model.hpp"

namespace mren::analysis {

struct CountRow {
    std::string name;
    std::int64_t count = 0;
};

// Exact element counts per parameter, rolled up by block; per_mreb is the
// subtotal of one MREB (they are all identical).
struct ParamReport {
    std::vector<CountRow> leaves;
    std::vector<CountRow> blocks;
    std::int64_t total = 0;
    std::int64_t per_mreb = 0;
};

ParamReport count_params(const model::MrenModelf& m);

// mac counts one multiply-accumulate (and one element-wise op) as a single
// operation; mac2 doubles every counted op, so totals scale by exactly 2.
enum class FlopsConvention { mac, mac2 };

FlopsConvention convention_from_string(const std::string& s);
std::string to_string(FlopsConvention c);

struct FlopsRow {
    std::string name;
    std::uint64_t ops = 0;
};

struct FlopsReport {
    int out_w = 0;
    int out_h = 0;
    FlopsConvention convention = FlopsConvention::mac;
    std::vector<FlopsRow> conv_rows;
    std::vector<FlopsRow> eltwise_rows; // aggregated per op kind
    std::uint64_t conv_total = 0;
    std::uint64_t eltwise_total = 0;
    std::uint64_t total = 0;
};

// MACs of one conv at the given output resolution: weight elements times
// sites, plus one op per output element when bias is enabled.
std::uint64_t conv_macs(const ConvSpec& spec, std::int64_t out_h, std::int64_t out_w);

// Walks the conv/eltwise inventory of a model built from cfg. Convs are
// counted at their true spatial resolution (LR for the body, upscaled after
// each reconstruction stage); element-wise and resampling work at one op per
// element. The output resolution must be divisible by the scale.
FlopsReport estimate_flops(const model::ModelConfig& cfg, int out_w, int out_h,
                           FlopsConvention convention);

// ablation axes

enum class Axis { n_mreb, w_comm, scacb_variant, dracb_variant };

// Accepts the full names plus the short aliases mreb / w / scacb / dracb.
Axis axis_from_string(const std::string& s);
std::string to_string(Axis a);

// The full sweep of an axis: every value build_variant accepts, except that
// the continuous w_comm axis is sampled at 0.1 steps.
std::vector<std::string> axis_default_values(Axis a);

struct VariantSpec {
    Axis axis;
    std::string value; // parsed and range-checked by build_variant
};

// Returns base with exactly one axis changed. Domains: n_mreb 3..8,
// w_comm [0, 1], scacb in {osa, oca, scnc, full}, dracb in {distill_only,
// distill_sigmoid, distill_skip, full}. Out-of-domain values raise
// ConfigError.
model::ModelConfig build_variant(const model::ModelConfig& base, const VariantSpec& spec);

// table emission

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows; // each sized like header
};

// Aligned monospace text: first column left-aligned, the rest right-aligned.
std::string table_text(const Table& t);

// RFC 4180: CRLF line ends, quoting only where required.
std::string table_csv(const Table& t);

// Inverse of table_csv; first record becomes the header.
Table parse_csv(const std::string& text);

std::string format_count(std::int64_t v);
std::string format_psnr(double v);  // 2 decimals
std::string format_ssim(double v);  // 4 decimals
std::string human_count(double v);  // 298.0K / 23.8G style

} // namespace mren::analysis
