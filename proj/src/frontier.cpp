// Exact summation over bond / trace configurations by eliminating edges one at a time while
// keeping only the connectivity pattern (and parity / event flags) of the active vertices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "ising/exact.hpp"

namespace ising {

namespace {

struct Key {
    std::uint64_t a = 0;
    std::uint64_t b = 0;
    bool operator==(const Key& o) const { return a == o.a && b == o.b; }
};

class StateTable {
public:
    StateTable(int k, std::uint64_t cap) : k_(k), cap_(cap), pend_vals_(kDepth * k) { rehash(1024); }

    // Accumulates w[0..k) * f into the entry for key. Updates are queued behind a short
    // prefetch pipeline; call flush() before reading the table.
    void add(const Key& key, const double* w, double f) {
        double* dst = enqueue(key);
        for (int i = 0; i < k_; ++i) dst[i] = w[i] * f;
    }
    void add(const Key& key, const double* w, const double* f) {
        double* dst = enqueue(key);
        for (int i = 0; i < k_; ++i) dst[i] = w[i] * f[i];
    }
    void flush() {
        while (pend_count_ > 0) retire();
    }
    std::size_t size() const { return keys_.size(); }
    const Key& key(std::size_t i) const { return keys_[i]; }
    const double* value(std::size_t i) const { return &vals_[i * k_]; }
    void clear() {
        pend_count_ = 0;
        keys_.clear();
        vals_.clear();
        if (++gen_ == 0) {
            for (auto& e : index_) e.gen = 0;
            gen_ = 1;
        }
    }

private:
    struct Entry {
        Key key;
        std::int32_t at;
        std::uint32_t gen;
    };
    static std::uint64_t hash(const Key& k) {
        std::uint64_t h = k.a ^ (k.b * 0x9e3779b97f4a7c15ull + (k.b >> 32));
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        return h ^ (h >> 31);
    }
    static constexpr int kDepth = 16;

    double* enqueue(const Key& key) {
        if (pend_count_ == kDepth) retire();
        int at = (pend_head_ + pend_count_) % kDepth;
        std::uint64_t h = hash(key);
        __builtin_prefetch(&index_[h & (index_.size() - 1)]);
        pend_keys_[at] = key;
        pend_hash_[at] = h;
        ++pend_count_;
        return &pend_vals_[static_cast<std::size_t>(at) * k_];
    }
    void retire() {
        int at = pend_head_;
        double* dst = slot(pend_keys_[at], pend_hash_[at]);
        const double* src = &pend_vals_[static_cast<std::size_t>(at) * k_];
        for (int i = 0; i < k_; ++i) dst[i] += src[i];
        pend_head_ = (pend_head_ + 1) % kDepth;
        --pend_count_;
    }
    double* slot(const Key& key, std::uint64_t h) {
        std::size_t mask = index_.size() - 1;
        std::size_t i = h & mask;
        while (true) {
            const Entry& e = index_[i];
            if (e.gen != gen_) break;
            if (e.key == key) return &vals_[static_cast<std::size_t>(e.at) * k_];
            i = (i + 1) & mask;
        }
        if (keys_.size() >= cap_) throw SizeError("frontier state table exceeds cap");
        index_[i] = Entry{key, static_cast<std::int32_t>(keys_.size()), gen_};
        keys_.push_back(key);
        vals_.resize(vals_.size() + k_, 0.0);
        if (keys_.size() * 2 > index_.size()) rehash(index_.size() * 2);
        return &vals_[(keys_.size() - 1) * k_];
    }
    void rehash(std::size_t n) {
        index_.assign(n, Entry{Key{}, -1, 0});
        std::size_t mask = n - 1;
        for (std::size_t j = 0; j < keys_.size(); ++j) {
            std::size_t i = hash(keys_[j]) & mask;
            while (index_[i].gen == gen_) i = (i + 1) & mask;
            index_[i] = Entry{keys_[j], static_cast<std::int32_t>(j), gen_};
        }
    }

    int k_;
    std::uint64_t cap_;
    std::vector<Key> keys_;
    std::vector<double> vals_;
    std::vector<Entry> index_;
    std::uint32_t gen_ = 1;
    std::array<Key, kDepth> pend_keys_{};
    std::array<std::uint64_t, kDepth> pend_hash_{};
    std::vector<double> pend_vals_;
    int pend_head_ = 0, pend_count_ = 0;
};

constexpr int kMaxSlots = 15;

// Decoded frontier state. Labels are canonical (first-occurrence order).
struct Frontier {
    int n = 0;
    std::array<std::uint8_t, 16> lab{};
    std::array<std::uint8_t, 16> mask{};  // per label
    std::array<std::uint8_t, 16> par1{};  // per slot (trace mode)
    std::uint8_t success = 0;

    int num_labels() const {
        int m = -1;
        for (int i = 0; i < n; ++i) m = std::max(m, static_cast<int>(lab[i]));
        return m + 1;
    }
    void canonicalize() {
        std::array<int, 16> remap;
        remap.fill(-1);
        std::array<std::uint8_t, 16> nm{};
        int next = 0;
        for (int i = 0; i < n; ++i) {
            int l = lab[i];
            if (remap[l] < 0) {
                remap[l] = next;
                nm[next] = mask[l];
                ++next;
            }
            lab[i] = static_cast<std::uint8_t>(remap[l]);
        }
        mask = nm;
    }
    void relabel(int from, int to) {
        for (int i = 0; i < n; ++i)
            if (lab[i] == from) lab[i] = static_cast<std::uint8_t>(to);
    }
    void remove_slot(int s) {
        for (int i = s; i + 1 < n; ++i) {
            lab[i] = lab[i + 1];
            par1[i] = par1[i + 1];
        }
        --n;
    }
    bool label_present(int l) const {
        for (int i = 0; i < n; ++i)
            if (lab[i] == l) return true;
        return false;
    }
};

// FK encoding: a = labels (4 bits per slot) | slot count << 60; b = masks (4 bits per label) | success << 60.
Key encode_fk(const Frontier& f) {
    Key k;
    for (int i = 0; i < f.n; ++i) k.a |= static_cast<std::uint64_t>(f.lab[i]) << (4 * i);
    k.a |= static_cast<std::uint64_t>(f.n) << 60;
    int nl = f.num_labels();
    for (int l = 0; l < nl; ++l) k.b |= static_cast<std::uint64_t>(f.mask[l] & 15) << (4 * l);
    k.b |= static_cast<std::uint64_t>(f.success) << 60;
    return k;
}

Frontier decode_fk(const Key& k) {
    Frontier f;
    f.n = static_cast<int>(k.a >> 60);
    for (int i = 0; i < f.n; ++i) f.lab[i] = (k.a >> (4 * i)) & 15;
    int nl = f.num_labels();
    for (int l = 0; l < nl; ++l) f.mask[l] = (k.b >> (4 * l)) & 15;
    f.success = static_cast<std::uint8_t>(k.b >> 60);
    return f;
}

// Trace encoding: a = labels | n << 60; b = parity (15 bits) | masks (2 bits per label) << 30 |
// success << 62.
Key encode_tr(const Frontier& f) {
    Key k;
    for (int i = 0; i < f.n; ++i) k.a |= static_cast<std::uint64_t>(f.lab[i]) << (4 * i);
    k.a |= static_cast<std::uint64_t>(f.n) << 60;
    for (int i = 0; i < f.n; ++i) {
        k.b |= static_cast<std::uint64_t>(f.par1[i] & 1) << i;
    }
    int nl = f.num_labels();
    for (int l = 0; l < nl; ++l) k.b |= static_cast<std::uint64_t>(f.mask[l] & 3) << (30 + 2 * l);
    k.b |= static_cast<std::uint64_t>(f.success & 1) << 62;
    return k;
}

Frontier decode_tr(const Key& k) {
    Frontier f;
    f.n = static_cast<int>(k.a >> 60);
    for (int i = 0; i < f.n; ++i) {
        f.lab[i] = (k.a >> (4 * i)) & 15;
        f.par1[i] = (k.b >> i) & 1;
    }
    int nl = f.num_labels();
    for (int l = 0; l < nl; ++l) f.mask[l] = (k.b >> (30 + 2 * l)) & 3;
    f.success = (k.b >> 62) & 1;
    return f;
}

// Elimination schedule over lattice vertices in index order.
struct Schedule {
    std::vector<int> order;                          // lattice vertices
    std::vector<std::vector<int>> back;              // bundles to earlier lattice vertices
    std::vector<std::vector<int>> retire_after;      // vertices retired after step i
};

Schedule make_schedule(const Graph& g) {
    Schedule s;
    int nv = g.num_vertices();
    std::vector<int> pos(nv, -1);
    for (int v = 0; v < nv; ++v)
        if (v != g.ghost()) {
            pos[v] = static_cast<int>(s.order.size());
            s.order.push_back(v);
        }
    int n = static_cast<int>(s.order.size());
    s.back.assign(n, {});
    s.retire_after.assign(n, {});
    std::vector<int> last(n);
    for (int i = 0; i < n; ++i) last[i] = i;
    for (int b = 0; b < g.num_bundles(); ++b) {
        if (g.is_ghost_bundle(b)) continue;
        int i = pos[g.bundle(b).u], j = pos[g.bundle(b).v];
        if (i > j) std::swap(i, j);
        s.back[j].push_back(b);
        last[i] = std::max(last[i], j);
    }
    for (int i = 0; i < n; ++i) s.retire_after[last[i]].push_back(s.order[i]);
    return s;
}

}  // namespace

std::vector<double> fk_frontier_sum(const Graph& g, const std::vector<double>& ps, const BoundaryPartition& xi,
                                    const FkQuery& q, const EnumCaps& caps) {
    const int K = static_cast<int>(ps.size());
    if (q.use_parity && !q.connect.empty())
        throw std::invalid_argument("parity and connection constraints cannot be combined");
    if (q.connect.size() > 2) throw std::invalid_argument("at most two connection constraints");
    const int nv = g.num_vertices();
    std::vector<std::uint8_t> init_mask(nv, 0);
    for (std::size_t r = 0; r < q.connect.size(); ++r) {
        for (int v : q.connect[r].first) init_mask[v] |= 1u << (2 * r);
        for (int v : q.connect[r].second) init_mask[v] |= 2u << (2 * r);
    }
    if (q.use_parity)
        for (int v : q.parity_set) init_mask[v] ^= 1u;
    const std::uint8_t need = static_cast<std::uint8_t>((1u << q.connect.size()) - 1);
    auto success_of = [&](std::uint8_t m) {
        std::uint8_t s = 0;
        for (std::size_t r = 0; r < q.connect.size(); ++r)
            if (((m >> (2 * r)) & 3) == 3) s |= 1u << r;
        return s;
    };
    auto merge_mask = [&](std::uint8_t a, std::uint8_t b) -> std::uint8_t {
        return q.use_parity ? static_cast<std::uint8_t>(a ^ b) : static_cast<std::uint8_t>(a | b);
    };

    // Permanent slots: ghost, then one hub per wired class.
    int nclass = xi.num_classes();
    std::vector<int> perm_vertex;  // vertex id or -1 for hubs
    if (g.has_ghost()) perm_vertex.push_back(g.ghost());
    for (int c = 0; c < nclass; ++c) perm_vertex.push_back(-1);
    const int P = static_cast<int>(perm_vertex.size());
    const int ghost_slot = g.has_ghost() ? 0 : -1;
    auto hub_slot = [&](int c) { return (g.has_ghost() ? 1 : 0) + c; };

    std::vector<char> forced(g.num_bundles(), 0);
    for (int b : q.forced_open) forced[b] = 1;
    std::vector<double> po(static_cast<std::size_t>(g.num_bundles()) * K), pc(po.size());
    for (int b = 0; b < g.num_bundles(); ++b)
        for (int k = 0; k < K; ++k) {
            double pe = bundle_p(ps[k], g.bundle(b).mult);
            po[b * K + k] = pe;
            pc[b * K + k] = forced[b] ? 0.0 : 1.0 - pe;
        }

    Schedule sch = make_schedule(g);
    std::vector<int> active;  // lattice vertices in slots P..
    auto slot_of = [&](int v) -> int {
        if (v == g.ghost()) return ghost_slot;
        auto it = std::lower_bound(active.begin(), active.end(), v);
        return P + static_cast<int>(it - active.begin());
    };

    StateTable cur(K, caps.max_frontier_states), nxt(K, caps.max_frontier_states);
    {
        Frontier f;
        f.n = P;
        std::uint8_t succ = 0;
        for (int i = 0; i < P; ++i) {
            f.lab[i] = static_cast<std::uint8_t>(i);
            f.mask[i] = perm_vertex[i] >= 0 ? init_mask[perm_vertex[i]] : 0;
            succ |= success_of(f.mask[i]);
        }
        f.success = succ;
        std::vector<double> one(K, 1.0);
        cur.add(encode_fk(f), one.data(), 1.0);
        cur.flush();
    }
    std::vector<double> fac(K);

    auto process_edge = [&](int si, int sj, int b, bool hub) {
        nxt.clear();
        for (std::size_t t = 0; t < cur.size(); ++t) {
            const double* w = cur.value(t);
            Frontier f = decode_fk(cur.key(t));
            if (!hub) nxt.add(cur.key(t), w, &pc[b * K]);
            int li = f.lab[si], lj = f.lab[sj];
            if (li != lj) {
                std::uint8_t m = merge_mask(f.mask[li], f.mask[lj]);
                f.mask[li] = m;
                f.relabel(lj, li);
                f.success |= success_of(m);
                f.canonicalize();
            }
            if (hub)
                nxt.add(encode_fk(f), w, 1.0);
            else
                nxt.add(encode_fk(f), w, &po[b * K]);
        }
        nxt.flush();
        std::swap(cur, nxt);
    };

    for (std::size_t step = 0; step < sch.order.size(); ++step) {
        int v = sch.order[step];
        if (P + static_cast<int>(active.size()) + 1 > kMaxSlots) throw SizeError("frontier too wide");
        // Introduce v as a new singleton slot at the end.
        nxt.clear();
        for (std::size_t t = 0; t < cur.size(); ++t) {
            Frontier f = decode_fk(cur.key(t));
            int l = f.num_labels();
            f.lab[f.n++] = static_cast<std::uint8_t>(l);
            f.mask[l] = init_mask[v];
            f.success |= success_of(init_mask[v]);
            nxt.add(encode_fk(f), cur.value(t), 1.0);
        }
        nxt.flush();
        std::swap(cur, nxt);
        active.push_back(v);
        int sv = slot_of(v);
        if (xi.cls.size() > static_cast<std::size_t>(v) && xi.cls[v] >= 0) process_edge(hub_slot(xi.cls[v]), sv, 0, true);
        for (const auto& inc : g.adj(v))
            if (inc.nbr == g.ghost()) process_edge(ghost_slot, sv, inc.bundle, false);
        for (int b : sch.back[step]) {
            int u = g.bundle(b).u == v ? g.bundle(b).v : g.bundle(b).u;
            process_edge(slot_of(u), sv, b, false);
        }
        for (int w : sch.retire_after[step]) {
            int s = slot_of(w);
            nxt.clear();
            for (std::size_t t = 0; t < cur.size(); ++t) {
                Frontier f = decode_fk(cur.key(t));
                int l = f.lab[s];
                std::uint8_t m = f.mask[l];
                f.remove_slot(s);
                double mult = 1.0;
                if (!f.label_present(l)) {
                    if (q.use_parity && (m & 1)) continue;
                    mult = 2.0;
                }
                f.canonicalize();
                nxt.add(encode_fk(f), cur.value(t), mult);
            }
            nxt.flush();
        std::swap(cur, nxt);
            active.erase(std::find(active.begin(), active.end(), w));
        }
    }
    std::vector<KahanSum> total(K);
    for (std::size_t t = 0; t < cur.size(); ++t) {
        Frontier f = decode_fk(cur.key(t));
        if ((f.success & need) != need) continue;
        double mult = std::ldexp(1.0, f.num_labels());
        const double* w = cur.value(t);
        for (int k = 0; k < K; ++k) total[k].add(w[k] * mult);
    }
    std::vector<double> out(K);
    for (int k = 0; k < K; ++k) out[k] = total[k].value();
    return out;
}

TraceSums trace_frontier_sum(const Graph& g, const std::vector<double>& betas, const TraceQuery& q,
                             const EnumCaps& caps) {
    const int K = static_cast<int>(betas.size());
    const int nv = g.num_vertices();
    std::vector<std::uint8_t> in_a(nv, 0), init_mask(nv, 0);
    for (int v : q.sources) {
        if (v == g.ghost()) throw std::invalid_argument("ghost cannot be a prescribed source");
        in_a[v] = 1;
    }
    for (int v : q.x) init_mask[v] |= 1;
    for (int v : q.y) init_mask[v] |= 2;

    // Per-bundle branch weights for a positive bundle: index 0 even, 1 odd.
    const int nb = g.num_bundles();
    std::vector<double> wz(static_cast<std::size_t>(nb) * K), wpos(static_cast<std::size_t>(nb) * K * 2, 0.0);
    std::vector<double> gev(static_cast<std::size_t>(nv) * K, 1.0), god(static_cast<std::size_t>(nv) * K, 0.0);
    for (int b = 0; b < nb; ++b)
        for (int k = 0; k < K; ++k) {
            double be = betas[k] * g.bundle(b).mult;
            double c = 2.0 * std::sinh(0.5 * be) * std::sinh(0.5 * be);
            double s = std::sinh(be);
            double ch = std::cosh(be);
            if (g.is_ghost_bundle(b)) {
                int v = g.bundle(b).u == g.ghost() ? g.bundle(b).v : g.bundle(b).u;
                gev[v * K + k] = ch;
                god[v * K + k] = s;
                continue;
            }
            wz[b * K + k] = 1.0;
            double* wp = &wpos[(static_cast<std::size_t>(b) * K + k) * 2];
            if (q.pair) {
                // n1 + n2 summed edgewise: a single current at 2 beta, clusters weighted by 2.
                wp[0] = 2.0 * std::sinh(be) * std::sinh(be);
                wp[1] = 2.0 * s * ch;
            } else {
                wp[0] = c;
                wp[1] = s;
            }
        }

    Schedule sch = make_schedule(g);
    std::vector<int> active;
    auto slot_of = [&](int v) {
        return static_cast<int>(std::lower_bound(active.begin(), active.end(), v) - active.begin());
    };

    StateTable cur(K, caps.max_frontier_states), nxt(K, caps.max_frontier_states);
    {
        Frontier f;
        std::vector<double> one(K, 1.0);
        cur.add(encode_tr(f), one.data(), 1.0);
        cur.flush();
    }
    std::vector<double> buf(K);

    for (std::size_t step = 0; step < sch.order.size(); ++step) {
        int v = sch.order[step];
        if (static_cast<int>(active.size()) + 1 > kMaxSlots) throw SizeError("frontier too wide");
        nxt.clear();
        bool has_ghost_edge = god[v * K] != 0.0 || gev[v * K] != 1.0;
        for (std::size_t t = 0; t < cur.size(); ++t) {
            Frontier f = decode_tr(cur.key(t));
            int l = f.num_labels();
            int s = f.n++;
            f.lab[s] = static_cast<std::uint8_t>(l);
            f.mask[l] = init_mask[v];
            if ((init_mask[v] & 3) == 3) f.success = 1;
            f.par1[s] = 0;
            nxt.add(encode_tr(f), cur.value(t), &gev[v * K]);
            if (has_ghost_edge) {
                f.par1[s] = 1;
                nxt.add(encode_tr(f), cur.value(t), &god[v * K]);
            }
        }
        nxt.flush();
        std::swap(cur, nxt);
        active.push_back(v);
        int sv = slot_of(v);
        for (int b : sch.back[step]) {
            int u = g.bundle(b).u == v ? g.bundle(b).v : g.bundle(b).u;
            int su = slot_of(u);
            nxt.clear();
            for (std::size_t t = 0; t < cur.size(); ++t) {
                const double* w = cur.value(t);
                nxt.add(cur.key(t), w, &wz[b * K]);
                Frontier f = decode_tr(cur.key(t));
                int li = f.lab[su], lj = f.lab[sv];
                if (li != lj) {
                    std::uint8_t m = f.mask[li] | f.mask[lj];
                    f.mask[li] = m;
                    f.relabel(lj, li);
                    if (m == 3) f.success = 1;
                    f.canonicalize();
                }
                for (int br = 0; br < 2; ++br) {
                    Frontier h = f;
                    h.par1[su] ^= br;
                    h.par1[sv] ^= br;
                    for (int k = 0; k < K; ++k) buf[k] = wpos[(static_cast<std::size_t>(b) * K + k) * 2 + br];
                    nxt.add(encode_tr(h), w, buf.data());
                }
            }
            nxt.flush();
        std::swap(cur, nxt);
        }
        for (int w : sch.retire_after[step]) {
            int s = slot_of(w);
            nxt.clear();
            for (std::size_t t = 0; t < cur.size(); ++t) {
                Frontier f = decode_tr(cur.key(t));
                if (f.par1[s] != in_a[w]) continue;
                int l = f.lab[s];
                f.remove_slot(s);
                double mult = (q.pair && !f.label_present(l)) ? 2.0 : 1.0;
                f.canonicalize();
                nxt.add(encode_tr(f), cur.value(t), mult);
            }
            nxt.flush();
        std::swap(cur, nxt);
            active.erase(std::find(active.begin(), active.end(), w));
        }
    }
    TraceSums out;
    out.total.assign(K, 0.0);
    out.event.assign(K, 0.0);
    std::vector<KahanSum> tot(K), ev(K);
    for (std::size_t t = 0; t < cur.size(); ++t) {
        Frontier f = decode_tr(cur.key(t));
        const double* w = cur.value(t);
        for (int k = 0; k < K; ++k) {
            tot[k].add(w[k]);
            if (f.success) ev[k].add(w[k]);
        }
    }
    for (int k = 0; k < K; ++k) {
        out.total[k] = tot[k].value();
        out.event[k] = ev[k].value();
    }
    if (K > 0 && out.total[0] <= 0.0) throw EmptySupportError("no current satisfies the source constraint");
    return out;
}

}  // namespace ising
