"""Regenerate the JSON fixtures in data/."""

from pathlib import Path

from crsp.graph import build_reference_chain, dump_graph
from crsp.mdp import dump_mdp, to_bipartite
from crsp.sim import build_maze

DATA = Path(__file__).resolve().parent.parent / "data"

LINE3 = """{
 "n": 3,
 "goal": 3,
 "edges": [
  {"from": 1, "to": 2, "cost": 1.0},
  {"from": 2, "to": 3, "cost": 1.0},
  {"from": 1, "to": 3, "cost": 3.0}
 ]
}
"""

# 5 nodes, one constrained node (3) with a fixed 30/70 split, a cycle 2 -> 4 -> 2.
SMALL_CONSTRAINED = """{
 "n": 5,
 "goal": 5,
 "edges": [
  {"from": 1, "to": 2, "cost": 1.0},
  {"from": 1, "to": 3, "cost": 2.0},
  {"from": 2, "to": 4, "cost": 1.5},
  {"from": 2, "to": 5, "cost": 4.0},
  {"from": 3, "to": 4, "cost": 0.5, "p_ref": 0.3},
  {"from": 3, "to": 5, "cost": 2.5, "p_ref": 0.7},
  {"from": 4, "to": 2, "cost": 1.0},
  {"from": 4, "to": 5, "cost": 1.0}
 ],
 "constrained": [{"node": 3, "q": {"4": 0.3, "5": 0.7}}]
}
"""


def main():
    DATA.mkdir(exist_ok=True)
    (DATA / "line3.json").write_text(LINE3)
    (DATA / "small_constrained.json").write_text(SMALL_CONSTRAINED)
    maze = build_maze()
    (DATA / "maze_mdp.json").write_text(dump_mdp(maze) + "\n")
    g, rc, cs = to_bipartite(maze)
    (DATA / "maze_bipartite.json").write_text(dump_graph(g, rc, cs) + "\n")
    print(f"wrote fixtures to {DATA}")


if __name__ == "__main__":
    main()
