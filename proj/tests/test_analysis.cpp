#include <doctest.h>

#include "mren/analysis.hpp"
#include "mren/error.hpp"

using namespace mren;
using namespace mren::analysis;

TEST_CASE("parameter report leaves add up") {
    model::ModelConfig cfg;
    model::MrenModelf m(cfg, 1);
    auto report = count_params(m);
    CHECK(report.total == 264183);
    CHECK(report.per_mreb == 30815);

    std::int64_t leaf_sum = 0;
    for (const auto& row : report.leaves) leaf_sum += row.count;
    CHECK(leaf_sum == report.total);
    std::int64_t block_sum = 0;
    for (const auto& row : report.blocks) block_sum += row.count;
    CHECK(block_sum == report.total);

    // the head is a single biased 3x3 conv from RGB
    std::int64_t head = 0;
    for (const auto& row : report.leaves)
        if (row.name.rfind("head.", 0) == 0) head += row.count;
    CHECK(head == 1680); // 3*3*3*60 + 60
}

TEST_CASE("conv mac closed forms") {
    CHECK(conv_macs(ConvSpec{60, 60, 3, 3, 1, false}, 64, 64) == 132710400ull);
    // bias adds one op per output element
    CHECK(conv_macs(ConvSpec{60, 60, 3, 3, 1, true}, 64, 64) ==
          132710400ull + 60ull * 64 * 64);
    // depthwise divides the per-site work by the group count
    CHECK(conv_macs(ConvSpec{60, 60, 5, 5, 60, false}, 10, 10) == 60ull * 25 * 100);
    CHECK(conv_macs(ConvSpec{3, 60, 3, 3, 1, true}, 100, 50) ==
          (3ull * 3 * 3 * 60 + 60) * 100 * 50);
}

TEST_CASE("flops estimate doubles under the two-op convention") {
    model::ModelConfig cfg; // x4 defaults
    auto mac = estimate_flops(cfg, 1280, 720, FlopsConvention::mac);
    auto mac2 = estimate_flops(cfg, 1280, 720, FlopsConvention::mac2);
    CHECK(mac.total == 53811318000ull);
    CHECK(mac2.total == 2 * mac.total);
    CHECK(mac.total == mac.conv_total + mac.eltwise_total);
    CHECK(mac.conv_rows.size() > 10);
    CHECK(!mac.eltwise_rows.empty());

    // affine in pixel count: per-pixel work scales, the 1x1-site gating
    // convs are a constant term
    auto r4 = estimate_flops(cfg, 2560, 1440, FlopsConvention::mac);
    auto r16 = estimate_flops(cfg, 5120, 2880, FlopsConvention::mac);
    CHECK(r16.total - r4.total == 4 * (r4.total - mac.total));
    const auto fixed = mac.total - (r4.total - mac.total) / 3;
    CHECK(fixed == 15600); // gating work is resolution-independent
    CHECK(r4.total > 3 * mac.total);

    CHECK_THROWS_AS(estimate_flops(cfg, 1281, 720, FlopsConvention::mac), UsageError);

    CHECK(convention_from_string("mac") == FlopsConvention::mac);
    CHECK(convention_from_string("mac2") == FlopsConvention::mac2);
    CHECK_THROWS_AS(convention_from_string("flops"), ConfigError);
}

TEST_CASE("ablation axes parse with aliases") {
    CHECK(axis_from_string("n_mreb") == Axis::n_mreb);
    CHECK(axis_from_string("mreb") == Axis::n_mreb);
    CHECK(axis_from_string("w") == Axis::w_comm);
    CHECK(axis_from_string("scacb") == Axis::scacb_variant);
    CHECK(axis_from_string("dracb_variant") == Axis::dracb_variant);
    CHECK_THROWS_AS(axis_from_string("depth"), ConfigError);
}

TEST_CASE("variant construction changes exactly one axis") {
    model::ModelConfig base;
    auto deeper = build_variant(base, {Axis::n_mreb, "8"});
    CHECK(deeper.n_mreb == 8);
    CHECK(deeper.scale == base.scale);
    CHECK(deeper.w_comm == base.w_comm);
    CHECK(deeper.variant == base.variant);

    auto silent = build_variant(base, {Axis::w_comm, "0.0"});
    CHECK(silent.w_comm == 0.0);
    CHECK(silent.n_mreb == base.n_mreb);

    auto spatial = build_variant(base, {Axis::scacb_variant, "osa"});
    CHECK(spatial.variant == model::Variant::osa);

    auto skip = build_variant(base, {Axis::dracb_variant, "distill_skip"});
    CHECK(skip.variant == model::Variant::distill_skip);
}

TEST_CASE("variant construction rejects out-of-domain values") {
    model::ModelConfig base;
    CHECK_THROWS_AS(build_variant(base, {Axis::n_mreb, "2"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::n_mreb, "9"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::n_mreb, "six"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::w_comm, "-0.1"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::w_comm, "1.1"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::scacb_variant, "distill_only"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::dracb_variant, "osa"}), ConfigError);
    CHECK_THROWS_AS(build_variant(base, {Axis::dracb_variant, "none"}), ConfigError);
}

TEST_CASE("text tables align and degrade to a header") {
    Table t;
    t.header = {"image", "psnr_db", "ssim"};
    t.rows = {{"alpha.png", "31.20", "0.9012"}, {"b.png", "8.05", "0.1234"}};
    const std::string text = table_text(t);
    CHECK(text.find("image") != std::string::npos);
    CHECK(text.find("alpha.png") != std::string::npos);
    // right-aligned numeric column: the short value is padded in front
    CHECK(text.find("   8.05") != std::string::npos);

    Table empty;
    empty.header = {"a", "bb"};
    const std::string only_header = table_text(empty);
    CHECK(only_header.find("a") != std::string::npos);
    CHECK(only_header.find('\n') != std::string::npos);
}

TEST_CASE("csv emission round-trips awkward cells") {
    Table t;
    t.header = {"name", "note"};
    t.rows = {{"plain", "simple"},
              {"comma,name", "says \"hi\""},
              {"multi\nline", "trailing space "}};
    const std::string csv = table_csv(t);
    CHECK(csv.find("\r\n") != std::string::npos);
    CHECK(csv.find("\"comma,name\"") != std::string::npos);
    CHECK(csv.find("\"says \"\"hi\"\"\"") != std::string::npos);

    Table back = parse_csv(csv);
    REQUIRE(back.header == t.header);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(back.rows[i] == t.rows[i]);
}

TEST_CASE("csv parser handles edge shapes") {
    auto t = parse_csv("a,b\r\n1,\r\n,2\r\n");
    REQUIRE(t.header.size() == 2);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1].empty());
    CHECK(t.rows[1][0].empty());

    auto lf_only = parse_csv("x,y\n3,4\n");
    REQUIRE(lf_only.rows.size() == 1);
    CHECK(lf_only.rows[0][0] == "3");
}

TEST_CASE("number formatting") {
    CHECK(format_count(264183) == "264183");
    CHECK(format_psnr(31.2) == "31.20");
    CHECK(format_ssim(0.89472) == "0.8947");
    CHECK(human_count(264183.0) == "264.2K");
    CHECK(human_count(298000.0) == "298.0K");
    CHECK(human_count(23.8e9) == "23.8G");
    CHECK(human_count(53811318000.0) == "53.8G");
    CHECK(human_count(512.0) == "512");
}
