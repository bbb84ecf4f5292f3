#include "mpl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mpl/errors.hpp"

namespace mpl {
namespace report {

namespace {

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* spec = "%.4f") {
  return v ? fmt(*v, spec) : std::string("NA");
}

std::optional<double> pct(long num, long den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  return fields;
}

}  // namespace

std::string format_mdd_text(const MddReport& rep) {
  const auto& c = rep.counts;
  const long correct = c.ta + c.fr;
  const long misp = c.fa + c.tr();
  std::ostringstream os;
  os << "correct pronunciations: " << correct << "\n";
  os << "  true accept   " << fmt_opt(pct(c.ta, correct), "%6.2f") << "% / " << c.ta << "\n";
  os << "  false reject  " << fmt_opt(pct(c.fr, correct), "%6.2f") << "% / " << c.fr << "\n";
  os << "mispronunciations: " << misp << "\n";
  os << "  false accept  " << fmt_opt(pct(c.fa, misp), "%6.2f") << "% / " << c.fa << "\n";
  os << "  true reject   " << fmt_opt(pct(c.tr(), misp), "%6.2f") << "% / " << c.tr() << "\n";
  os << "    correct diagnosis   " << fmt_opt(pct(c.tr_correct_diag, c.tr()), "%6.2f") << "% / "
     << c.tr_correct_diag << "\n";
  os << "    erroneous diagnosis " << fmt_opt(pct(c.tr_error_diag, c.tr()), "%6.2f") << "% / "
     << c.tr_error_diag << "\n";
  os << "precision: " << fmt_opt(rep.scores.precision, "%.2f")
     << "%  recall: " << fmt_opt(rep.scores.recall, "%.2f")
     << "%  f1: " << fmt_opt(rep.scores.f1, "%.2f") << "%\n";
  os << "per: " << fmt(rep.per_percent, "%.2f") << "%\n";
  return os.str();
}

std::string format_mdd_csv(const MddReport& rep) {
  const auto& c = rep.counts;
  const long correct = c.ta + c.fr;
  const long misp = c.fa + c.tr();
  std::ostringstream os;
  os << "key,value\n";
  os << "ta," << c.ta << "\n";
  os << "fr," << c.fr << "\n";
  os << "fa," << c.fa << "\n";
  os << "tr_correct_diag," << c.tr_correct_diag << "\n";
  os << "tr_error_diag," << c.tr_error_diag << "\n";
  os << "tr," << c.tr() << "\n";
  os << "ta_pct," << fmt_opt(pct(c.ta, correct)) << "\n";
  os << "fr_pct," << fmt_opt(pct(c.fr, correct)) << "\n";
  os << "fa_pct," << fmt_opt(pct(c.fa, misp)) << "\n";
  os << "tr_pct," << fmt_opt(pct(c.tr(), misp)) << "\n";
  os << "tr_correct_diag_pct," << fmt_opt(pct(c.tr_correct_diag, c.tr())) << "\n";
  os << "tr_error_diag_pct," << fmt_opt(pct(c.tr_error_diag, c.tr())) << "\n";
  os << "precision," << fmt_opt(rep.scores.precision) << "\n";
  os << "recall," << fmt_opt(rep.scores.recall) << "\n";
  os << "f1," << fmt_opt(rep.scores.f1) << "\n";
  os << "per," << fmt(rep.per_percent) << "\n";
  return os.str();
}

std::string format_speaker_per_csv(const std::map<std::string, double>& speaker_per) {
  std::ostringstream os;
  os << "speaker,per\n";
  for (const auto& [speaker, value] : speaker_per) {
    os << speaker << "," << fmt(value) << "\n";
  }
  return os.str();
}

std::map<std::string, double> load_speaker_per_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("per csv: cannot open " + path.string());
  std::map<std::string, double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("speaker,", 0) == 0) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) {
      throw DataError("per csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": expected 'speaker,per'");
    }
    try {
      out[fields[0]] = std::stod(fields[1]);
    } catch (const std::exception&) {
      throw DataError("per csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": bad number '" + fields[1] + "'");
    }
  }
  return out;
}

std::map<std::string, SpeakerRatings> load_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("scores csv: cannot open " + path.string());
  std::map<std::string, SpeakerRatings> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("speaker,", 0) == 0) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw DataError("scores csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": expected 'speaker,intelligibility,accentedness'");
    }
    SpeakerRatings r;
    try {
      r.intelligibility = std::stod(fields[1]);
      r.accentedness = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw DataError("scores csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": bad number");
    }
    if (r.intelligibility < 0.0 || r.intelligibility > 100.0) {
      throw DataError("scores csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": intelligibility outside [0, 100]");
    }
    if (r.accentedness < 1.0 || r.accentedness > 9.0) {
      throw DataError("scores csv: " + path.string() + ":" + std::to_string(line_no) +
                      ": accentedness outside [1, 9]");
    }
    out[fields[0]] = r;
  }
  return out;
}

CorrelationReport correlate(const std::map<std::string, double>& speaker_per,
                            const std::map<std::string, SpeakerRatings>& ratings, int k) {
  const auto [top, bottom] = mdd::select_extremes(speaker_per, k);

  std::vector<std::string> selected = bottom;
  selected.insert(selected.end(), top.begin(), top.end());
  std::sort(selected.begin(), selected.end());

  std::vector<std::string> missing;
  CorrelationReport rep;
  for (const auto& speaker : selected) {
    const auto it = ratings.find(speaker);
    if (it == ratings.end()) {
      missing.push_back(speaker);
      continue;
    }
    rep.rows.push_back(
        {speaker, speaker_per.at(speaker), it->second.intelligibility, it->second.accentedness});
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& s : missing) names += (names.empty() ? "" : ", ") + s;
    throw DataError("correlate: no ratings for speakers: " + names);
  }

  std::vector<double> per_values, intel, accent;
  for (const auto& row : rep.rows) {
    per_values.push_back(row.per_percent);
    intel.push_back(row.intelligibility);
    accent.push_back(row.accentedness);
  }
  rep.r_intelligibility = mdd::pearson(per_values, intel);
  rep.r_accentedness = mdd::pearson(per_values, accent);
  const int n = static_cast<int>(rep.rows.size());
  if (rep.r_intelligibility) rep.p_intelligibility = mdd::pearson_p_value(*rep.r_intelligibility, n);
  if (rep.r_accentedness) rep.p_accentedness = mdd::pearson_p_value(*rep.r_accentedness, n);
  return rep;
}

std::string format_correlation_csv(const CorrelationReport& rep) {
  std::ostringstream os;
  os << "speaker,per,intelligibility,accentedness\n";
  for (const auto& row : rep.rows) {
    os << row.speaker << "," << fmt(row.per_percent) << "," << fmt(row.intelligibility) << ","
       << fmt(row.accentedness) << "\n";
  }
  return os.str();
}

std::string format_correlation_text(const CorrelationReport& rep) {
  std::ostringstream os;
  os << "n=" << rep.rows.size() << " r_intelligibility=" << fmt_opt(rep.r_intelligibility, "%.6f")
     << " p_intelligibility=" << fmt(rep.p_intelligibility, "%.6g")
     << " r_accentedness=" << fmt_opt(rep.r_accentedness, "%.6f")
     << " p_accentedness=" << fmt(rep.p_accentedness, "%.6g") << "\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw DataError("report: cannot write " + path.string());
  out << content;
  if (!out) throw DataError("report: write failed for " + path.string());
}

}  // namespace report
}  // namespace mpl
