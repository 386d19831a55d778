#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ising {

constexpr int kMaxDim = 4;
using Point = std::array<int, kMaxDim>;

struct PointHash {
    std::size_t operator()(const Point& p) const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (int c : p) {
            h ^= static_cast<std::uint32_t>(c);
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

int linf(const Point& a, const Point& b);
int l1(const Point& a, const Point& b);

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Bundle {
    int u;
    int v;
    int mult;
};

struct Incidence {
    int nbr;
    int bundle;
};

// Immutable multigraph. Lattice vertices carry the lattice points they stand for
// (one point, or a whole core after collapse); the ghost carries none.
class Graph {
public:
    int dim() const { return dim_; }
    int num_vertices() const { return static_cast<int>(members_.size()); }
    int num_bundles() const { return static_cast<int>(bundles_.size()); }
    int ghost() const { return ghost_; }
    bool has_ghost() const { return ghost_ >= 0; }
    int num_lattice_vertices() const { return num_vertices() - (has_ghost() ? 1 : 0); }

    const Bundle& bundle(int i) const { return bundles_[i]; }
    const std::vector<Bundle>& bundles() const { return bundles_; }
    const std::vector<Incidence>& adj(int v) const { return adj_[v]; }
    const std::vector<Point>& members(int v) const { return members_[v]; }
    const Point& coord(int v) const { return members_[v].front(); }
    bool is_boundary(int v) const { return boundary_[v] != 0; }
    bool is_ghost_bundle(int b) const {
        return has_ghost() && (bundles_[b].u == ghost_ || bundles_[b].v == ghost_);
    }
    // -1 when the point is not represented.
    int index_of(const Point& p) const;
    int total_multiplicity() const;
    // Lattice edges from v to points of Z^d not represented in the graph.
    int outside_degree(int v) const;
    // Bundle joining u and v, -1 if none.
    int find_bundle(int u, int v) const;

    static Graph from_parts(int dim, std::vector<std::vector<Point>> members,
                            std::vector<Bundle> bundles, int ghost);

private:
    void finalize();

    int dim_ = 2;
    int ghost_ = -1;
    std::vector<std::vector<Point>> members_;
    std::vector<Bundle> bundles_;
    std::vector<char> boundary_;
    std::vector<std::vector<Incidence>> adj_;
    std::unordered_map<Point, int, PointHash> index_;
};

struct Box {
    Point center{};
    int radius = 0;
    bool contains(const Point& p, int d) const;
    bool contains(const Box& b, int d) const;
    bool intersects(const Box& b, int d) const;
    std::vector<Point> points(int d) const;
};

// Nearest-neighbour graph induced on a set of lattice points.
Graph graph_from_points(int d, std::vector<Point> pts);
Graph build_box_graph(int d, int n, const Point& center = Point{});
Graph attach_ghost(const Graph& g);
Graph collapse(const Graph& g, const std::vector<std::vector<int>>& cores);

// Index arithmetic on a graph produced by build_box_graph (a ghost, if attached, is ignored).
class BoxLattice {
public:
    explicit BoxLattice(const Graph& g);

    const Graph& graph() const { return *g_; }
    int dim() const { return d_; }
    int radius() const { return n_; }
    const Point& center() const { return center_; }
    Box box() const { return Box{center_, n_}; }
    bool contains(const Point& p) const;
    int vertex(const Point& p) const;  // -1 outside the box
    const Point& point(int v) const { return g_->coord(v); }
    // Bundle from v to v + e_axis; -1 when that neighbour is outside.
    int edge(int v, int axis) const { return up_[static_cast<std::size_t>(v) * d_ + axis]; }
    std::vector<int> vertices_in(const Box& b) const;
    // Bundles with both endpoints in b.
    std::vector<int> edges_in(const Box& b) const;

private:
    const Graph* g_;
    int d_ = 2, n_ = 0, side_ = 1;
    Point center_{};
    std::vector<int> up_;
};

struct BlockFamily {
    int k = 1;
    int d = 2;
    Box region;
    std::vector<Box> blocks;

    // Blocks whose centres are within l-infinity distance 3k (includes the block).
    std::vector<int> near(int i) const;
    // Blocks intersecting block i (includes the block).
    std::vector<int> intersecting(int i) const;
    int index_of_center(const Point& c) const;
};

BlockFamily blocks(int d, const Box& region, int k);
bool strongly_disjoint(const Box& a, const Box& b, int n, int d);

std::vector<Point> neighborhood(int d, const std::vector<Point>& s, int r);
std::vector<std::pair<Point, Point>> edge_neighborhood(int d, const std::vector<Point>& s, int r);

// Graph-distance versions restricted to the lattice vertices of g.
std::vector<int> graph_distances(const Graph& g, const std::vector<int>& sources);
std::vector<int> neighborhood(const Graph& g, const std::vector<int>& s, int r);
std::vector<int> edge_neighborhood(const Graph& g, const std::vector<int>& s, int r);

}  // namespace ising
