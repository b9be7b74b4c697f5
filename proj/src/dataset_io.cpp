#include "mrp/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mrp/error.hpp"
#include "mrp/io.hpp"

namespace mrp::io {

namespace {

std::vector<std::string> header(const DurationDataset& data, bool calendar) {
    std::vector<std::string> h{"subject_id", "epoch", "from_state", "to_state"};
    if (calendar) {
        h.emplace_back("entry");
        h.emplace_back("exit");
    } else {
        h.emplace_back("gap");
    }
    h.emplace_back("x");
    for (int k = 1; k <= data.dim; ++k) h.push_back("z" + std::to_string(k));
    return h;
}

std::string write(const DurationDataset& data, bool calendar) {
    CsvWriter out(header(data, calendar));
    for (const auto& r : data.records) {
        std::vector<std::string> row{data.subject_ids.at(static_cast<std::size_t>(r.subject)), std::to_string(r.epoch),
                                     data.states.at(static_cast<std::size_t>(r.from_state)),
                                     r.is_event() ? data.states.at(static_cast<std::size_t>(r.to_state))
                                                  : std::string(kCensoredToken)};
        if (calendar) {
            row.push_back(format_real(r.entry));
            row.push_back(format_real(r.entry + r.gap));
        } else {
            row.push_back(format_real(r.gap));
        }
        row.push_back(format_real(r.x));
        for (Eigen::Index k = 0; k < r.z.size(); ++k) row.push_back(format_real(r.z[k]));
        out.row(row);
    }
    return out.str();
}

}  // namespace

std::string write_duration_csv(const DurationDataset& data) { return write(data, false); }
std::string write_calendar_csv(const DurationDataset& data) { return write(data, true); }

DurationDataset read_dataset_csv(const std::string& text, const std::string& source) {
    const auto table = parse_csv(text, source);
    const auto& h = table.header;
    const bool calendar = std::find(h.begin(), h.end(), "entry") != h.end();
    const auto expect = [&](std::size_t i, const std::string& name) {
        if (i >= h.size() || h[i] != name) {
            throw DataError(source + ": header column " + std::to_string(i + 1) + " must be '" + name + "'");
        }
    };
    expect(0, "subject_id");
    expect(1, "epoch");
    expect(2, "from_state");
    expect(3, "to_state");
    std::size_t col = 4;
    if (calendar) {
        expect(col++, "entry");
        expect(col++, "exit");
    } else {
        expect(col++, "gap");
    }
    expect(col++, "x");
    const std::size_t z0 = col;
    for (std::size_t k = z0; k < h.size(); ++k) expect(k, "z" + std::to_string(k - z0 + 1));

    DurationDataset data;
    data.dim = static_cast<int>(h.size() - z0);
    std::map<std::string, int> state_index;
    const auto state = [&](const std::string& label, const std::string& where) {
        if (label.empty()) throw DataError(where + ": empty state label");
        if (label == kCensoredToken) throw DataError(where + ": CENSORED is reserved for to_state");
        const auto [it, added] = state_index.emplace(label, static_cast<int>(data.states.size()));
        if (added) data.states.push_back(label);
        return it->second;
    };
    std::map<std::string, int> subject_index;
    double clock = 0.0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::string where = source + ":" + std::to_string(table.line[i]);
        const auto num = [&](std::size_t c) { return parse_real(row[c], where + ": " + h[c]); };
        EpochRecord r;
        const auto& id = row[0];
        if (id.empty()) throw DataError(where + ": empty subject_id");
        const auto epoch = parse_integer(row[1], where + ": epoch");
        const bool new_subject = data.subject_ids.empty() || data.subject_ids.back() != id;
        if (new_subject) {
            if (subject_index.contains(id)) throw DataError(where + ": rows of subject " + id + " are not contiguous");
            subject_index.emplace(id, static_cast<int>(data.subject_ids.size()));
            data.subject_ids.push_back(id);
            clock = 0.0;
            if (epoch != 0) throw DataError(where + ": first epoch of subject " + id + " must be 0");
        } else if (epoch != data.records.back().epoch + 1) {
            throw DataError(where + ": epochs of subject " + id + " must be consecutive");
        }
        r.subject = static_cast<int>(data.subject_ids.size()) - 1;
        r.epoch = static_cast<int>(epoch);
        r.from_state = state(row[2], where);
        r.to_state = row[3] == kCensoredToken ? kCensored : state(row[3], where);
        if (calendar) {
            r.entry = num(4);
            const double exit = num(5);
            r.gap = exit - r.entry;
            if (!std::isfinite(r.entry) || !std::isfinite(exit)) throw DataError(where + ": entry and exit must be finite");
        } else {
            r.gap = num(4);
            r.entry = clock;
        }
        if (!(r.gap > 0.0) || !std::isfinite(r.gap)) throw DataError(where + ": gap must be finite and > 0");
        clock = r.entry + r.gap;
        r.x = num(col - 1);
        if (!std::isfinite(r.x)) throw DataError(where + ": x must be finite");
        r.z.resize(data.dim);
        for (int k = 0; k < data.dim; ++k) {
            r.z[k] = num(z0 + static_cast<std::size_t>(k));
            if (!std::isfinite(r.z[k])) throw DataError(where + ": z" + std::to_string(k + 1) + " must be finite");
        }
        data.records.push_back(std::move(r));
    }
    if (data.records.empty()) throw DataError(source + ": no data rows");
    data.reindex();
    return data;
}

}  // namespace mrp::io
