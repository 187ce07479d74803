#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <qdspin/io.hpp>
#include <qdspin/plot.hpp>

using namespace qdspin;
using nlohmann::json;

TEST(EventFile, RoundTripAndLayout) {
  std::vector<PhotonEvent> ev{{1.5, 4, Polarization::H, 0}, {2.25, 9, Polarization::L, 3},
                              {1e9, 0xffffffffu, Polarization::unpolarized, 7}};
  std::stringstream ss;
  io::write_events(ss, ev);
  const auto bytes = ss.str();
  EXPECT_EQ(bytes.size(), 4u + 4u + 8u + 17u * ev.size());
  EXPECT_EQ(bytes.substr(0, 4), "QDEV");
  EXPECT_EQ(static_cast<unsigned char>(bytes[16 + 17 + 12]), static_cast<unsigned>(Polarization::L));
  EXPECT_EQ(io::read_events(ss), ev);
}

TEST(EventFile, RejectsCorruptInput) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(io::read_events(bad), io::FormatError);
  std::stringstream ss;
  io::write_events(ss, {{1.0, 0, Polarization::H, 0}, {2.0, 0, Polarization::V, 0}});
  std::string s = ss.str();
  std::stringstream truncated(s.substr(0, s.size() - 3));
  EXPECT_THROW(io::read_events(truncated), io::FormatError);
  s[16 + 12] = 42;
  std::stringstream badpol(s);
  EXPECT_THROW(io::read_events(badpol), io::FormatError);
}

TEST(DetectionFile, RoundTrip) {
  DetectionStream d{"herald_R", {0.5, 1.25, 99.0}};
  std::stringstream ss;
  io::write_detections(ss, d, {0.0, 100.0});
  const auto back = io::read_detections(ss);
  EXPECT_EQ(back.stream.channel, "herald_R");
  EXPECT_EQ(back.stream.t, d.t);
  EXPECT_DOUBLE_EQ(back.span.end, 100.0);
  std::string s;
  {
    std::stringstream w;
    io::write_detections(w, d, {0.0, 100.0});
    s = w.str();
  }
  std::stringstream trunc(s.substr(0, s.size() - 4));
  EXPECT_THROW(io::read_detections(trunc), io::FormatError);
}

TEST(Channels, ParsePresetsAndOverrides) {
  const auto s = default_scheme();
  const auto j = json::parse(R"({"channels": [
    {"id": "a", "transitions": ["X0"], "analyzer": "H", "preset": "spcm"},
    {"id": "b", "transitions": ["XX0_T3"], "analyzer": "R", "preset": "sspd", "efficiency": 0.8, "dark_rate_per_ns": 1e-7},
    {"id": "c"}]})");
  const auto ch = io::parse_channels(j, s);
  ASSERT_EQ(ch.size(), 3u);
  EXPECT_EQ(ch[0].line_filter, lines_of(s, "X0"));
  EXPECT_DOUBLE_EQ(ch[0].dead_time, 50.0);
  EXPECT_EQ(ch[1].analyzer, Analyzer::R);
  EXPECT_DOUBLE_EQ(ch[1].efficiency, 0.8);
  EXPECT_DOUBLE_EQ(ch[1].dark_rate, 1e-7);
  EXPECT_DOUBLE_EQ(ch[1].jitter_sigma, kSspd.jitter_sigma);
  EXPECT_TRUE(ch[2].line_filter.empty());
  EXPECT_DOUBLE_EQ(ch[2].efficiency, 1.0);
}

TEST(Channels, Errors) {
  const auto s = default_scheme();
  EXPECT_THROW(io::parse_channels(json::object(), s), io::FormatError);
  EXPECT_THROW(io::parse_channels(json::parse(R"({"channels":[{"id":"a","transitions":["nope"]}]})"), s),
               io::FormatError);
  EXPECT_THROW(io::parse_channels(json::parse(R"({"channels":[{"id":"a","analyzer":"Q"}]})"), s), io::FormatError);
  EXPECT_THROW(io::parse_channels(json::parse(R"({"channels":[{"id":"a","preset":"pmt"}]})"), s), io::FormatError);
  EXPECT_THROW(io::parse_channels(json::parse(R"({"channels":[{"id":"a","efficiency":2}]})"), s), io::FormatError);
}

TEST(Csv, HistogramRoundTrip) {
  CorrelationHistogram h = empty_histogram({"a", "b", 0.5, 0.25});
  h.counts = {3, 0, 7, 1};
  h.n_start = 10;
  h.n_stop = 20;
  h.span = 1000.0;
  std::stringstream ss;
  io::write_histogram_csv(ss, h, {{"start", "a"}});
  const auto t = io::read_csv(ss);
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau_center_ns", "counts", "g2", "g2_err"}));
  const auto back = io::histogram_from_table(t);
  EXPECT_EQ(back.counts, h.counts);
  EXPECT_EQ(back.n_start, 10u);
  EXPECT_TRUE(back.same_binning(h));
  const auto g2 = t.col("g2");
  EXPECT_NEAR(g2[2], 7 * 1000.0 / (200 * 0.25), 1e-6);
  EXPECT_TRUE(std::isinf(t.col("g2_err")[1]));
}

TEST(Csv, CurveRoundTripAndErrors) {
  Curve c{{0.1, 0.2}, {0.5, std::nan("")}, {0.1, INFINITY}, {true, false}};
  std::stringstream ss;
  io::write_curve_csv(ss, c);
  const auto back = io::curve_from_table(io::read_csv(ss));
  EXPECT_EQ(back.defined, c.defined);
  EXPECT_DOUBLE_EQ(back.value[0], 0.5);
  std::stringstream empty("# only a comment\n");
  EXPECT_THROW(io::read_csv(empty), io::FormatError);
  std::stringstream ragged("a,b\n1,2\n3\n");
  EXPECT_THROW(io::read_csv(ragged), io::FormatError);
  std::stringstream word("a\nfoo\n");
  EXPECT_THROW(io::read_csv(word), io::FormatError);
}

TEST(FitReport, ContainsParametersAndCovariance) {
  BeatFit f;
  f.period = 0.83;
  f.damping_time = 2.0;
  f.amplitude = 0.7;
  f.covariance(0, 0) = 1e-6;
  f.fss = 4.98;
  f.fss_err = 0.01;
  const auto j = io::fit_report(f);
  EXPECT_DOUBLE_EQ(j["parameters"]["period_ns"]["value"].get<double>(), 0.83);
  EXPECT_NEAR(j["parameters"]["period_ns"]["error"].get<double>(), 1e-3, 1e-12);
  EXPECT_EQ(j["covariance"].size(), 5u);
  EXPECT_DOUBLE_EQ(j["fss_ueV"]["value"].get<double>(), 4.98);
}

TEST(Plot, RendersEachKind) {
  std::stringstream h("tau_center_ns,counts,g2,g2_err\n-0.5,1,0.9,0.9\n0.5,4,1.2,0.6\n");
  const auto svg = plot::render(io::read_csv(h), plot::Kind::histogram, "h");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  std::stringstream c("tau_ns,C,C_err,defined\n0.1,0.5,0.1,1\n0.2,-0.3,0.1,1\n");
  const auto csvg = plot::render(io::read_csv(c), plot::Kind::curve, "c");
  EXPECT_NE(csvg.find("<line"), std::string::npos);
  std::stringstream s("energy_ueV,I_H,I_V,DOP\n0,1,2,-0.33\n1,2,1,0.33\n");
  EXPECT_NE(plot::render(io::read_csv(s), plot::Kind::spectrum, "s").find("DOP"), std::string::npos);
  std::stringstream empty("tau_ns,C,C_err,defined\n");
  EXPECT_THROW(plot::render(io::read_csv(empty), plot::Kind::curve), io::FormatError);
  std::stringstream wrong("x,y\n1,2\n");
  EXPECT_THROW(plot::render(io::read_csv(wrong), plot::Kind::curve), io::FormatError);
  EXPECT_THROW(plot::parse_kind("pie"), std::invalid_argument);
}

TEST(Channels, ShippedExamplesParse) {
  const auto s = default_scheme();
  for (const char* f : {"channels_cascade.json", "channels_readout_dark.json"}) {
    std::ifstream in(std::string(QDSPIN_SOURCE_DIR) + "/configs/" + f);
    ASSERT_TRUE(in) << f;
    const auto ch = io::parse_channels(json::parse(in), s);
    EXPECT_FALSE(ch.empty()) << f;
  }
}
