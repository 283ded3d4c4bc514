"""Random graphs and small systems shared across test modules."""

from learnphys.graphs import make_graph


def random_graph(rng, n_nodes=4, n_edges=5, widths=(2, 3, 2)):
    wg, wn, we = widths
    senders = rng.integers(0, n_nodes, n_edges)
    receivers = rng.integers(0, n_nodes, n_edges)
    return make_graph(
        rng.normal(size=wg),
        rng.normal(size=(n_nodes, wn)),
        rng.normal(size=(n_edges, we)),
        senders,
        receivers,
    )
