#pragma once

// Synthetic sequence generation and the CSV loaders/preprocessors for the
// ratings, basket, and temperature datasets. Everything here is
// deterministic under a fixed seed.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace efa {

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Synthetic ratings generator
// ---------------------------------------------------------------------------
// Five movies (tokens 0..4), a uniform random order per user. Ratings are
// N(3,1) by default with these overrides:
//   (a) movie 1 (the second movie): N(1,1) when movie 0 was rated earlier,
//       N(5,1) otherwise (the rule is exhaustive for this movie);
//   (b) movie 3 directly after movie 2 -> movie 3 ~ N(1,1), and symmetrically
//       movie 2 directly after movie 3 -> movie 2 ~ N(1,1);
//   (c) movie 4 in the last slot -> N(5,1).

inline double synthetic_conditional_mean(const std::vector<int>& order, int pos) {
    const int I = static_cast<int>(order.size());
    const int movie = order[pos];
    if (movie == 1) {
        for (int j = 0; j < pos; ++j)
            if (order[j] == 0) return 1.0;
        return 5.0;
    }
    if (movie == 3 && pos > 0 && order[pos - 1] == 2) return 1.0;
    if (movie == 2 && pos > 0 && order[pos - 1] == 3) return 1.0;
    if (movie == 4 && pos == I - 1) return 5.0;
    return 3.0;
}

inline SequenceBatch generate_synthetic_ratings(int n_users, std::uint64_t seed) {
    if (n_users < 1) throw ContractError("generate_synthetic_ratings: n_users >= 1");
    Rng rng(seed);
    SequenceBatch batch;
    batch.seqs.reserve(n_users);
    for (int u = 0; u < n_users; ++u) {
        Sequence s;
        s.x = {0, 1, 2, 3, 4};
        rng.shuffle(s.x);
        s.y.resize(5);
        for (int i = 0; i < 5; ++i) s.y[i] = rng.normal(synthetic_conditional_mean(s.x, i), 1.0);
        batch.seqs.push_back(std::move(s));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Ratings preprocessing
// ---------------------------------------------------------------------------

struct RatingsEvent {
    long user = 0, item = 0;
    int rating = 0;
    long timestamp = 0;
};

struct RatingsData {
    SequenceBatch train, val, test;
    std::vector<long> vocab;  // token -> original item id
    int n_users = 0, n_items = 0;
    double sparsity = 0.0;  // share of absent (user, item) pairs
};

namespace detail {

inline RatingsData assemble_ratings(std::vector<RatingsEvent> events, int top_n, std::uint64_t seed) {
    if (events.empty()) throw DataError("ratings: no events");
    // top_n items by unique-user count, ties by item id ascending
    std::map<long, std::set<long>> item_users;
    for (const auto& e : events) item_users[e.item].insert(e.user);
    std::vector<std::pair<long, long>> ranked;  // (item, count)
    for (const auto& [item, users] : item_users) ranked.emplace_back(item, static_cast<long>(users.size()));
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > top_n) ranked.resize(top_n);
    std::map<long, int> token;
    std::vector<long> vocab;
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [item, _] : ranked) {
        token[item] = static_cast<int>(vocab.size());
        vocab.push_back(item);
    }

    std::map<long, std::vector<RatingsEvent>> by_user;
    for (const auto& e : events)
        if (token.count(e.item)) by_user[e.user].push_back(e);

    // drop users whose review count >= 2x their unique timestamps
    Rng rng(seed);
    std::vector<std::pair<long, Sequence>> users;
    long nnz = 0;
    for (auto& [user, evs] : by_user) {
        std::set<long> stamps;
        for (const auto& e : evs) stamps.insert(e.timestamp);
        if (evs.size() >= 2 * stamps.size()) continue;
        // one uniformly chosen event per timestamp, ordered by timestamp
        std::map<long, std::vector<const RatingsEvent*>> per_stamp;
        for (const auto& e : evs) per_stamp[e.timestamp].push_back(&e);
        Sequence s;
        for (auto& [stamp, cands] : per_stamp) {
            const RatingsEvent* pick = cands[cands.size() == 1 ? 0 : rng.randint(static_cast<int>(cands.size()))];
            s.x.push_back(token[pick->item]);
            s.y.push_back(static_cast<double>(pick->rating));
        }
        if (s.x.empty()) continue;
        nnz += static_cast<long>(std::set<int>(s.x.begin(), s.x.end()).size());
        users.emplace_back(user, std::move(s));
    }
    if (users.empty()) throw DataError("ratings: no users survive filtering");

    std::vector<int> order(users.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const int n = static_cast<int>(users.size());
    const int n_train = static_cast<int>(n * 0.5625);
    const int n_val = static_cast<int>(n * 0.1875);
    RatingsData out;
    out.vocab = vocab;
    out.n_users = n;
    out.n_items = static_cast<int>(vocab.size());
    out.sparsity = 1.0 - static_cast<double>(nnz) / (static_cast<double>(n) * out.n_items);
    for (int i = 0; i < n; ++i) {
        Sequence& s = users[order[i]].second;
        (i < n_train ? out.train : i < n_train + n_val ? out.val : out.test).seqs.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

inline RatingsData preprocess_ratings_exp1(const std::vector<RatingsEvent>& events, int top_n, std::uint64_t seed) {
    return detail::assemble_ratings(events, top_n, seed);
}

// Keep ratings {3,4,5}, map to {1,2,3}, then the same pipeline.
inline RatingsData preprocess_ratings_exp2(const std::vector<RatingsEvent>& events, int top_n, std::uint64_t seed) {
    std::vector<RatingsEvent> kept;
    for (auto e : events)
        if (e.rating >= 3 && e.rating <= 5) {
            e.rating -= 2;
            kept.push_back(e);
        }
    if (kept.empty()) throw DataError("ratings: nothing in {3,4,5}");
    return detail::assemble_ratings(kept, top_n, seed);
}

// ---------------------------------------------------------------------------
// Baskets
// ---------------------------------------------------------------------------

struct Basket {
    std::vector<long> items;  // purchase order preserved
};

struct BasketData {
    std::vector<std::vector<int>> baskets;  // tokenized, order preserved
    std::vector<long> vocab;
};

inline BasketData preprocess_baskets(const std::vector<Basket>& baskets, int min_basket_count,
                                     int min_items_per_basket) {
    if (baskets.empty()) throw DataError("baskets: empty input");
    std::map<long, int> appearances;  // baskets containing the item
    for (const auto& b : baskets) {
        std::set<long> uniq(b.items.begin(), b.items.end());
        for (long it : uniq) appearances[it] += 1;
    }
    std::map<long, int> token;
    BasketData out;
    for (const auto& [item, cnt] : appearances)
        if (cnt >= min_basket_count) {
            token[item] = static_cast<int>(out.vocab.size());
            out.vocab.push_back(item);
        }
    for (const auto& b : baskets) {
        std::vector<int> kept;
        for (long it : b.items)
            if (token.count(it)) kept.push_back(token[it]);
        if (static_cast<int>(kept.size()) >= min_items_per_basket) out.baskets.push_back(std::move(kept));
    }
    if (out.baskets.empty()) throw DataError("baskets: nothing survives filtering");
    return out;
}

// ---------------------------------------------------------------------------
// Temperatures
// ---------------------------------------------------------------------------

struct TemperatureReading {
    std::string region, city;
    double lat = 0.0, lon = 0.0;
    int year = 0, month = 0, day = 0;
    double temp = 0.0;
};

struct YearRange {
    int lo = 0, hi = 0;  // inclusive
    bool contains(int y) const { return y >= lo && y <= hi; }
};

struct TemperatureData {
    SequenceBatch train, val, test;  // one cross-section per date; x empty
    std::vector<std::string> sites;  // "region/city"
    Tensor coords;                   // 2 x n_sites (lat, lon), matches tau rows 0..1
    std::vector<std::string> rejected;
};

// October readings only; a site missing any October date covered by the
// ranges (relative to the union of dates any site reports) is rejected.
// The lagged variant appends previous-day columns; tau gains a third row
// that is 0 for current-day columns and 1 for previous-day ones.
inline TemperatureData load_temperatures(const std::vector<TemperatureReading>& readings,
                                         const YearRange& train_years, const YearRange& val_years,
                                         const YearRange& test_years, bool lagged = false) {
    auto in_range = [&](int y) {
        return train_years.contains(y) || val_years.contains(y) || test_years.contains(y);
    };
    std::set<std::tuple<int, int, int>> dates;
    std::map<std::string, std::map<std::tuple<int, int, int>, double>> series;
    std::map<std::string, std::pair<double, double>> site_coords;
    for (const auto& r : readings) {
        if (r.month != 10 || !in_range(r.year)) continue;
        std::string key = r.region + "/" + r.city;
        auto date = std::make_tuple(r.year, r.month, r.day);
        dates.insert(date);
        series[key][date] = r.temp;
        site_coords[key] = {r.lat, r.lon};
    }
    if (dates.empty()) throw DataError("temperatures: no October readings in range");

    TemperatureData out;
    for (const auto& [key, temps] : series) {
        bool complete = true;
        for (const auto& d : dates)
            if (!temps.count(d)) {
                complete = false;
                break;
            }
        if (complete)
            out.sites.push_back(key);
        else
            out.rejected.push_back(key);
    }
    if (out.sites.empty()) throw DataError("temperatures: every site has missing data");

    const int n = static_cast<int>(out.sites.size());
    out.coords = Tensor(2, n);
    for (int i = 0; i < n; ++i) {
        out.coords(0, i) = site_coords[out.sites[i]].first;
        out.coords(1, i) = site_coords[out.sites[i]].second;
    }
    Tensor tau(lagged ? 3 : 2, lagged ? 2 * n : n, 0.0);
    for (int i = 0; i < n; ++i) {
        tau(0, i) = out.coords(0, i);
        tau(1, i) = out.coords(1, i);
        if (lagged) {
            tau(0, n + i) = out.coords(0, i);
            tau(1, n + i) = out.coords(1, i);
            tau(2, n + i) = 1.0;
        }
    }
    for (auto& b : {&out.train, &out.val, &out.test}) b->attributes = tau;

    std::vector<std::tuple<int, int, int>> sorted_dates(dates.begin(), dates.end());
    for (size_t di = 0; di < sorted_dates.size(); ++di) {
        const auto& d = sorted_dates[di];
        Sequence s;
        s.y.resize(lagged ? 2 * n : n);
        for (int i = 0; i < n; ++i) s.y[i] = series[out.sites[i]][d];
        if (lagged) {
            if (di == 0) continue;  // no previous day for the first date
            const auto& prev = sorted_dates[di - 1];
            for (int i = 0; i < n; ++i) s.y[n + i] = series[out.sites[i]][prev];
        }
        int y = std::get<0>(d);
        if (train_years.contains(y))
            out.train.seqs.push_back(std::move(s));
        else if (val_years.contains(y))
            out.val.seqs.push_back(std::move(s));
        else if (test_years.contains(y))
            out.test.seqs.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Great-circle geometry
// ---------------------------------------------------------------------------

inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double R = 6371.0, deg = M_PI / 180.0;
    double dlat = (lat2 - lat1) * deg, dlon = (lon2 - lon1) * deg;
    double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
               std::cos(lat1 * deg) * std::cos(lat2 * deg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * R * std::asin(std::min(1.0, std::sqrt(a)));
}

// k nearest other sites per site; ties broken by index ascending.
inline std::vector<std::vector<int>> haversine_knn(const std::vector<std::pair<double, double>>& coords, int k) {
    const int n = static_cast<int>(coords.size());
    if (k < 1 || k >= n) throw ContractError("haversine_knn: need 1 <= k < site count");
    std::vector<std::vector<int>> out(n);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> d;
        for (int j = 0; j < n; ++j)
            if (j != i)
                d.emplace_back(haversine_km(coords[i].first, coords[i].second, coords[j].first, coords[j].second), j);
        std::sort(d.begin(), d.end());
        for (int j = 0; j < k; ++j) out[i].push_back(d[j].second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV input
// ---------------------------------------------------------------------------
// Headers: ratings user,item,rating,timestamp; baskets basket_id,position,item;
// temperatures region,city,lat,lon,date,temp (date YYYY-MM-DD).

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) row.push_back(field);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("empty file " + path);
    return rows;
}

}  // namespace detail

inline std::vector<RatingsEvent> load_ratings_csv(const std::string& path) {
    auto rows = detail::read_csv(path);
    std::vector<RatingsEvent> out;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 4) throw DataError(path + ": ratings row needs 4 fields");
        out.push_back({std::stol(rows[i][0]), std::stol(rows[i][1]), std::stoi(rows[i][2]), std::stol(rows[i][3])});
    }
    return out;
}

inline std::vector<Basket> load_baskets_csv(const std::string& path) {
    auto rows = detail::read_csv(path);
    std::map<long, std::vector<std::pair<int, long>>> grouped;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 3) throw DataError(path + ": basket row needs 3 fields");
        grouped[std::stol(rows[i][0])].emplace_back(std::stoi(rows[i][1]), std::stol(rows[i][2]));
    }
    std::vector<Basket> out;
    for (auto& [id, items] : grouped) {
        std::sort(items.begin(), items.end());
        Basket b;
        for (const auto& [pos, item] : items) b.items.push_back(item);
        out.push_back(std::move(b));
    }
    return out;
}

inline std::vector<TemperatureReading> load_temperature_csv(const std::string& path) {
    auto rows = detail::read_csv(path);
    std::vector<TemperatureReading> out;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 6) throw DataError(path + ": temperature row needs 6 fields");
        TemperatureReading r;
        r.region = rows[i][0];
        r.city = rows[i][1];
        r.lat = std::stod(rows[i][2]);
        r.lon = std::stod(rows[i][3]);
        const std::string& date = rows[i][4];
        if (date.size() != 10 || date[4] != '-' || date[7] != '-') throw DataError(path + ": bad date " + date);
        r.year = std::stoi(date.substr(0, 4));
        r.month = std::stoi(date.substr(5, 2));
        r.day = std::stoi(date.substr(8, 2));
        r.temp = std::stod(rows[i][5]);
        if (r.lat < -90 || r.lat > 90 || r.lon < -180 || r.lon > 180)
            throw DataError(path + ": coordinates out of range");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace efa
