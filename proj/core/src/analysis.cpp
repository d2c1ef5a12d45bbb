#include "mren/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mren/error.hpp"

namespace mren::analysis {

namespace {

// "mreb.0.dracb.1.distill.weight" -> "mreb.0"; "head.weight" -> "head"
std::string block_key(const std::string& name) {
    const auto first = name.find('.');
    if (first == std::string::npos) return name;
    const std::string head = name.substr(0, first);
    if (head != "mreb" && head != "rbwa") return head;
    const auto second = name.find('.', first + 1);
    return second == std::string::npos ? name : name.substr(0, second);
}

} // namespace

ParamReport count_params(const model::MrenModelf& m) {
    ParamReport report;
    for (const auto& p : m.params()) {
        report.leaves.push_back({p.name, p.value.count()});
        report.total += p.value.count();
        const std::string key = block_key(p.name);
        if (!report.blocks.empty() && report.blocks.back().name == key)
            report.blocks.back().count += p.value.count();
        else
            report.blocks.push_back({key, p.value.count()});
        if (key == "mreb.0") report.per_mreb += p.value.count();
    }
    return report;
}

FlopsConvention convention_from_string(const std::string& s) {
    if (s == "mac") return FlopsConvention::mac;
    if (s == "mac2") return FlopsConvention::mac2;
    throw ConfigError("unknown FLOPs convention '" + s + "' (expected mac or mac2)");
}

std::string to_string(FlopsConvention c) {
    return c == FlopsConvention::mac ? "mac" : "mac2";
}

std::uint64_t conv_macs(const ConvSpec& spec, std::int64_t out_h, std::int64_t out_w) {
    const std::uint64_t sites = static_cast<std::uint64_t>(out_h) * static_cast<std::uint64_t>(out_w);
    const std::uint64_t weight = static_cast<std::uint64_t>(spec.out_channels) *
                                 (spec.in_channels / spec.groups) * spec.kh * spec.kw;
    std::uint64_t macs = weight * sites;
    if (spec.bias) macs += static_cast<std::uint64_t>(spec.out_channels) * sites;
    return macs;
}

FlopsReport estimate_flops(const model::ModelConfig& cfg, int out_w, int out_h,
                           FlopsConvention convention) {
    cfg.validate();
    if (out_w < 1 || out_h < 1) throw UsageError("output resolution must be positive");
    if (out_w % cfg.scale != 0 || out_h % cfg.scale != 0)
        throw UsageError("output resolution " + std::to_string(out_w) + "x" +
                         std::to_string(out_h) + " is not divisible by scale " +
                         std::to_string(cfg.scale));

    const model::MrenModelf m(cfg);
    const std::uint64_t lr_area = static_cast<std::uint64_t>(out_w / cfg.scale) *
                                  static_cast<std::uint64_t>(out_h / cfg.scale);
    const std::uint64_t factor = convention == FlopsConvention::mac2 ? 2 : 1;

    FlopsReport report;
    report.out_w = out_w;
    report.out_h = out_h;
    report.convention = convention;

    for (const auto& layer : m.conv_layers()) {
        const std::uint64_t sites = layer.unit_spatial
                                        ? 1
                                        : lr_area * static_cast<std::uint64_t>(layer.spatial_factor);
        // conv_macs takes h*w; fold the flat site count into one axis
        const std::uint64_t macs =
            conv_macs(layer.spec, static_cast<std::int64_t>(sites), 1) * factor;
        report.conv_rows.push_back({layer.name, macs});
        report.conv_total += macs;
    }

    std::vector<FlopsRow> elt; // keyed by op kind, first-appearance order
    for (const auto& e : m.elementwise_ops()) {
        const std::uint64_t sites =
            e.unit_spatial ? 1 : lr_area * static_cast<std::uint64_t>(e.spatial_factor);
        const std::uint64_t ops = static_cast<std::uint64_t>(e.channels) * sites * factor;
        auto it = std::find_if(elt.begin(), elt.end(),
                               [&e](const FlopsRow& r) { return r.name == e.op; });
        if (it == elt.end())
            elt.push_back({e.op, ops});
        else
            it->ops += ops;
        report.eltwise_total += ops;
    }
    report.eltwise_rows = std::move(elt);
    report.total = report.conv_total + report.eltwise_total;
    return report;
}

Axis axis_from_string(const std::string& s) {
    if (s == "n_mreb" || s == "mreb") return Axis::n_mreb;
    if (s == "w_comm" || s == "w") return Axis::w_comm;
    if (s == "scacb_variant" || s == "scacb") return Axis::scacb_variant;
    if (s == "dracb_variant" || s == "dracb") return Axis::dracb_variant;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

std::string to_string(Axis a) {
    switch (a) {
    case Axis::n_mreb: return "n_mreb";
    case Axis::w_comm: return "w_comm";
    case Axis::scacb_variant: return "scacb_variant";
    case Axis::dracb_variant: return "dracb_variant";
    }
    throw UsageError("bad axis enum value");
}

std::vector<std::string> axis_default_values(Axis a) {
    switch (a) {
    case Axis::n_mreb: return {"3", "4", "5", "6", "7", "8"};
    case Axis::w_comm:
        return {"0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"};
    case Axis::scacb_variant: return {"osa", "oca", "scnc", "full"};
    case Axis::dracb_variant: return {"distill_only", "distill_sigmoid", "distill_skip", "full"};
    }
    throw UsageError("bad axis enum value");
}

namespace {

int parse_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("'") + s + "' is not a valid " + what);
    }
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("'") + s + "' is not a valid " + what);
    }
}

} // namespace

model::ModelConfig build_variant(const model::ModelConfig& base, const VariantSpec& spec) {
    model::ModelConfig out = base;
    switch (spec.axis) {
    case Axis::n_mreb: {
        const int n = parse_int(spec.value, "n_mreb value");
        if (n < 3 || n > 8)
            throw ConfigError("n_mreb value " + spec.value + " outside the sweep domain [3, 8]");
        out.n_mreb = n;
        break;
    }
    case Axis::w_comm: {
        const double w = parse_double(spec.value, "w_comm value");
        if (!(w >= 0.0 && w <= 1.0))
            throw ConfigError("w_comm value " + spec.value + " outside [0, 1]");
        out.w_comm = w;
        break;
    }
    case Axis::scacb_variant: {
        const auto v = model::variant_from_string(spec.value);
        if (v != model::Variant::full && v != model::Variant::osa && v != model::Variant::oca &&
            v != model::Variant::scnc)
            throw ConfigError("'" + spec.value + "' is not an scacb variant");
        out.variant = v;
        break;
    }
    case Axis::dracb_variant: {
        const auto v = model::variant_from_string(spec.value);
        if (v != model::Variant::full && v != model::Variant::distill_only &&
            v != model::Variant::distill_sigmoid && v != model::Variant::distill_skip)
            throw ConfigError("'" + spec.value + "' is not a dracb variant");
        out.variant = v;
        break;
    }
    }
    out.validate();
    return out;
}

std::string table_text(const Table& t) {
    const std::size_t cols = t.header.size();
    std::vector<std::size_t> width(cols);
    for (std::size_t c = 0; c < cols; ++c) width[c] = t.header[c].size();
    for (const auto& row : t.rows) {
        if (row.size() != cols) throw UsageError("table row width does not match the header");
        for (std::size_t c = 0; c < cols; ++c) width[c] = std::max(width[c], row[c].size());
    }

    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::string& cell = row[c];
            const std::size_t pad = width[c] - cell.size();
            if (c == 0) {
                out += cell;
                if (c + 1 < cols) out.append(pad, ' ');
            } else {
                out.append(pad, ' ');
                out += cell;
            }
            if (c + 1 < cols) out += "  ";
        }
        out += '\n';
    };
    emit(t.header);
    std::size_t rule = 0;
    for (std::size_t c = 0; c < cols; ++c) rule += width[c] + (c + 1 < cols ? 2 : 0);
    out.append(rule, '-');
    out += '\n';
    for (const auto& row : t.rows) emit(row);
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    out += '"';
    return out;
}

} // namespace

std::string table_csv(const Table& t) {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            out += csv_field(row[c]);
        }
        out += "\r\n";
    };
    emit(t.header);
    for (const auto& row : t.rows) {
        if (row.size() != t.header.size())
            throw UsageError("table row width does not match the header");
        emit(row);
    }
    return out;
}

Table parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false; // any char consumed for the current field

    std::size_t i = 0;
    const std::size_t n = text.size();
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(record);
        record.clear();
    };
    while (i < n) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                field += ch;
                ++i;
            }
            continue;
        }
        if (ch == '"' && !field_started) {
            quoted = true;
            field_started = true;
            ++i;
        } else if (ch == ',') {
            end_field();
            ++i;
        } else if (ch == '\r' || ch == '\n') {
            end_record();
            if (ch == '\r' && i + 1 < n && text[i + 1] == '\n') ++i;
            ++i;
        } else {
            field += ch;
            field_started = true;
            ++i;
        }
    }
    if (quoted) throw UsageError("unterminated quoted CSV field");
    // a pending field, or a comma that promised one more, still ends a record
    if (!field.empty() || field_started || !record.empty()) end_record();

    Table t;
    if (records.empty()) return t;
    t.header = records.front();
    t.rows.assign(records.begin() + 1, records.end());
    return t;
}

std::string format_count(std::int64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    return buf;
}

std::string format_psnr(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string format_ssim(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string human_count(double v) {
    char buf[48];
    const double a = std::fabs(v);
    if (a >= 1e9) std::snprintf(buf, sizeof(buf), "%.1fG", v / 1e9);
    else if (a >= 1e6) std::snprintf(buf, sizeof(buf), "%.1fM", v / 1e6);
    else if (a >= 1e3) std::snprintf(buf, sizeof(buf), "%.1fK", v / 1e3);
    else std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
}

} // namespace mren::analysis
