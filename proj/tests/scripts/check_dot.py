"""Parse a DOT file with pydot and print a JSON summary of its edges.

Usage: check_dot.py FILE
Exit status is 1 when the file does not parse into exactly one graph.
"""
import json
import sys

import pydot


def main():
    with open(sys.argv[1], encoding="utf-8") as f:
        text = f.read()
    graphs = pydot.graph_from_dot_data(text)
    if not graphs or len(graphs) != 1:
        print(json.dumps({"ok": False}))
        return 1
    g = graphs[0]
    edges = []
    for e in g.get_edges():
        edges.append({
            "from": e.get_source().strip('"'),
            "to": e.get_destination().strip('"'),
            "penwidth": float(e.get("penwidth")),
            "sign": e.get("sign"),
        })
    nodes = [n.get_name().strip('"') for n in g.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
    for sub in g.get_subgraphs():
        nodes += [n.get_name().strip('"') for n in sub.get_nodes()]
    print(json.dumps({"ok": True, "name": g.get_name(), "edges": edges, "nodes": nodes}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
