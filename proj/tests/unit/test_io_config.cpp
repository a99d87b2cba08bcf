#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include <gtest/gtest.h>

#include "gpoabc/config.hpp"
#include "gpoabc/io.hpp"

using namespace gpoabc;

namespace {

ReturnSeries ingest(const std::string& text, IngestMode mode)
{
    IngestOptions o;
    o.mode = mode;
    return ingest_csv(parse_csv(text), o);
}

ErrorCode code_of(const std::function<void()>& f, std::string* message = nullptr)
{
    try {
        f();
    } catch (const Error& e) {
        if (message)
            *message = e.what();
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::state;
}

Json minimal(const std::string& model = "gsv") { return Json{{"schema_version", 1}, {"model", {{"id", model}}}}; }

} // namespace

// --- numbers and CSV ------------------------------------------------------------------

TEST(FormatDouble, RoundTripsAndSpecials)
{
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123, 5e-324}) {
        const std::string s = format_double(v);
        EXPECT_EQ(parse_double(s, "x"), v) << s;
    }
    EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
    EXPECT_EQ(format_double(std::nan("")), "nan");
    EXPECT_EQ(parse_double("+1.5", "x"), 1.5);
    EXPECT_THROW(parse_double("1.5abc", "x"), Error);
    EXPECT_THROW(parse_double("", "x"), Error);
}

TEST(Csv, QuotesBlankLinesAndFieldCounts)
{
    const CsvDocument d = parse_csv("date,\"a,b\"\n\n2020-01-01, 1.5 \n\"2020-01-02\",\"2\"\n");
    ASSERT_EQ(d.header.size(), 2u);
    EXPECT_EQ(d.header[1], "a,b");
    ASSERT_EQ(d.rows.size(), 2u);
    EXPECT_EQ(d.rows[0][1], "1.5");
    EXPECT_EQ(d.line_numbers[0], 3u);
    std::string msg;
    EXPECT_EQ(code_of([] { parse_csv("a,b\n1,2,3\n"); }, &msg), ErrorCode::io);
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_EQ(code_of([] { parse_csv("a,\"b\n"); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { parse_csv(""); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { parse_csv("a\n1\n").column("b"); }), ErrorCode::io);
}

// --- ingestion --------------------------------------------------------------------------

TEST(Ingest, PriceExample)
{
    const auto s = ingest("date,p\n2020-01-01,1\n2020-01-02," + format_double(std::exp(0.01)) + "\n", IngestMode::prices);
    ASSERT_EQ(s.length(), 1u);
    EXPECT_NEAR(s.returns(0, 0), 1.0, 1e-12);
    EXPECT_EQ(s.dates[0], "2020-01-02");
    EXPECT_EQ(s.assets, std::vector<std::string>{"p"});
}

TEST(Ingest, ConstantPricesGiveZeroReturns)
{
    const auto s = ingest("date,p\n2020-01-01,7\n2020-01-02,7\n2020-01-03,7\n", IngestMode::prices);
    EXPECT_EQ(s.returns.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Ingest, ThreePriceOracleAndColumnSelection)
{
    const auto s = [] {
        IngestOptions o;
        o.mode = IngestMode::prices;
        o.columns = {"b"};
        return ingest_csv(parse_csv("date,a,b\n2020-01-01,1,100\n2020-01-02,2,110\n2020-01-03,3,99\n"), o);
    }();
    ASSERT_EQ(s.returns.cols(), 1);
    EXPECT_NEAR(s.returns(0, 0), 100.0 * std::log(110.0 / 100.0), 1e-12);
    EXPECT_NEAR(s.returns(1, 0), 100.0 * std::log(99.0 / 110.0), 1e-12);
}

TEST(Ingest, ReturnsModeKeepsValues)
{
    const auto s = ingest("date,x,y\n2020-01-01,0.5,-1\n2020-01-02,1e-3,2\n", IngestMode::returns);
    EXPECT_EQ(s.returns.rows(), 2);
    EXPECT_EQ(s.returns(0, 1), -1.0);
    EXPECT_EQ(s.returns(1, 0), 1e-3);
    EXPECT_EQ(s.asset(1)(1), 2.0);
}

TEST(Ingest, NonPositivePricesListRows)
{
    std::string msg;
    EXPECT_EQ(code_of([&] { ingest("date,p\n2020-01-01,1\n2020-01-02,0\n2020-01-03,2\n2020-01-04,-1\n", IngestMode::prices); }, &msg),
        ErrorCode::io);
    EXPECT_NE(msg.find("3, 5"), std::string::npos) << msg;
}

TEST(Ingest, DateAndValueErrors)
{
    std::string msg;
    EXPECT_EQ(code_of([] { ingest("date,p\n2020-13-01,1\n", IngestMode::returns); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { ingest("date,p\n01/02/2020,1\n", IngestMode::returns); }), ErrorCode::io);
    EXPECT_EQ(code_of([&] { ingest("date,p\n2020-01-02,1\n2020-01-01,2\n", IngestMode::returns); }, &msg), ErrorCode::io);
    EXPECT_NE(msg.find("increasing"), std::string::npos);
    EXPECT_EQ(code_of([] { ingest("date,p\n2020-01-01,abc\n", IngestMode::returns); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { ingest("date,p\n2020-01-01,\n", IngestMode::returns); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { ingest("date,p\n2020-01-01,1\n", IngestMode::prices); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { ingest("day,p\n2020-01-01,1\n", IngestMode::returns); }), ErrorCode::io);
    EXPECT_EQ(code_of([] { parse_ingest_mode("levels"); }), ErrorCode::configuration);
}

TEST(Dates, Validation)
{
    EXPECT_TRUE(is_iso_date("2024-02-29"));
    EXPECT_FALSE(is_iso_date("2023-02-29"));
    EXPECT_FALSE(is_iso_date("2023-2-28"));
    EXPECT_EQ(add_days("2023-12-31", 1), "2024-01-01");
    EXPECT_EQ(add_days("2024-02-28", 1), "2024-02-29");
}

TEST(Files, MissingFileIsIoError)
{
    EXPECT_EQ(code_of([] { read_text("/nonexistent/dir/file.csv"); }), ErrorCode::io);
}

// --- configuration --------------------------------------------------------------------

TEST(Config, MinimalDocumentUsesModelDefaults)
{
    const RunConfig g = parse_config(minimal());
    EXPECT_EQ(g.model(), ModelId::gsv);
    EXPECT_EQ(g.dim(), 3u);
    EXPECT_EQ(g.gpo.initial_samples, 50u);
    EXPECT_EQ(g.gpo.iterations, 450u);
    EXPECT_EQ(g.seed, 1u);
    const RunConfig a = parse_config(minimal("asv"));
    EXPECT_EQ(a.dim(), 4u);
    EXPECT_EQ(a.pmh.theta0.size(), 4);
    EXPECT_EQ(a.box.lower(3), 1.2);
    EXPECT_EQ(a.box.upper(3), 2.0);
}

TEST(Config, RejectsUnknownKeysAtEveryLevel)
{
    std::string msg;
    Json top = minimal();
    top["bogus"] = 1;
    EXPECT_EQ(code_of([&] { parse_config(top); }, &msg), ErrorCode::configuration);
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    Json nested = minimal();
    nested["gpo"] = {{"initial_samples", 10}, {"typo", 2}};
    EXPECT_EQ(code_of([&] { parse_config(nested); }, &msg), ErrorCode::configuration);
    EXPECT_NE(msg.find("typo"), std::string::npos);
}

TEST(Config, SchemaVersionAndRequiredFields)
{
    Json j = minimal();
    j["schema_version"] = 2;
    EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::configuration);
    EXPECT_EQ(code_of([] { parse_config(Json{{"model", {{"id", "gsv"}}}}); }), ErrorCode::configuration);
    EXPECT_EQ(code_of([] { parse_config(Json{{"schema_version", 1}, {"model", {{"id", "garch"}}}}); }), ErrorCode::configuration);
    Json bad_box = minimal();
    bad_box["search_box"] = {{"lower", {0.0, 0.0}}, {"upper", {1.0, 1.0}}};
    EXPECT_EQ(code_of([&] { parse_config(bad_box); }), ErrorCode::configuration);
    Json wrong_type = minimal();
    wrong_type["seed"] = "seven";
    EXPECT_EQ(code_of([&] { parse_config(wrong_type); }), ErrorCode::configuration);
}

TEST(Config, ResolvedDocumentRoundTrips)
{
    for (const auto* model : {"gsv", "asv"}) {
        Json j = minimal(model);
        j["seed"] = 42;
        j["epsilon_sweep"] = {{"epsilons", {0.1, 0.3}}};
        const RunConfig cfg = parse_config(j);
        const Json resolved = to_json(cfg);
        const Json again = to_json(parse_config(resolved));
        EXPECT_EQ(resolved.dump(), again.dump()) << model;
        EXPECT_EQ(parse_config(resolved).seed, 42u);
    }
}

TEST(Config, LoadConfigReportsInvalidJson)
{
    const auto path = std::filesystem::temp_directory_path() / "gpoabc_bad_config.json";
    write_text(path, "{ not json");
    EXPECT_EQ(code_of([&] { load_config(path); }), ErrorCode::configuration);
    std::filesystem::remove(path);
}

TEST(Config, SamplesLoad)
{
    std::size_t count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(GPOABC_SAMPLES_DIR)) {
        if (entry.path().extension() != ".json")
            continue;
        SCOPED_TRACE(entry.path().filename().string());
        EXPECT_NO_THROW(load_config(entry.path()));
        ++count;
    }
    EXPECT_GE(count, 8u);
}
