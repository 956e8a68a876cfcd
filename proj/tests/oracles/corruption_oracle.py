"""Replays the caption-corruption draws: word k (counted through the global
caption, then LF, then HF captions) becomes "None" iff uniform(k) < p, with
uniform drawn from the counter generator keyed by (seed, "captions.corrupt")."""
import sys

M = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & M
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M
    return x ^ (x >> 31)


def fnv1a64(s):
    h = 0xCBF29CE484222325
    for b in s.encode():
        h = ((h ^ b) * 0x100000001B3) & M
    return h


def uniform(seed, stream, i):
    key = splitmix64(splitmix64(seed) ^ fnv1a64(stream))
    return (splitmix64(key ^ splitmix64(i)) >> 11) * 2.0 ** -53


def corrupt(texts, p, seed):
    k = 0
    out = []
    for t in texts:
        words = t.split(" ")
        res = []
        for w in words:
            res.append("None" if uniform(seed, "captions.corrupt", k) < p else w)
            k += 1
        out.append(" ".join(res))
    return out


def write_cases(path):
    """Frozen replay cases read by the acceptance suite."""
    import json

    sets = [
        ("a plain gray background with 2 objects: a red circle at the top left and a blue band at the center",
         ["large red circle, top left", "small blue band, vertical, center"],
         ["smooth solid surface with crisp clean edges", "fine striped texture with sharp alternating edges"]),
        ("a plain white background with 1 object: a teal triangle at the bottom right",
         ["medium teal triangle, tilted, bottom right"],
         ["checkered tiled texture with hard blocky edges"]),
        ("a plain black background with 0 objects", [], []),
        ("a plain orange background with 3 objects: a green rectangle at the top center, "
         "a purple circle at the center and a yellow band at the bottom left",
         ["large green rectangle, diagonal, top center", "medium purple circle, center",
          "small yellow band, horizontal, bottom left"],
         ["grainy noisy surface with rough irregular edges", "dotted speckled texture with soft scattered highlights",
          "smooth solid surface with crisp clean edges"]),
    ]
    cases = []
    for g, lf, hf in sets:
        for seed in (0, 1, 7, 2024, 18446744073709551615):
            for p in (0.0, 0.3, 1.0):
                out = corrupt([g] + lf + hf, p, seed)
                cases.append({"seed": seed, "p": p,
                              "input": {"global": g, "lf": lf, "hf": hf},
                              "expected": {"global": out[0], "lf": out[1:1 + len(lf)], "hf": out[1 + len(lf):]}})
    with open(path, "w") as f:
        json.dump(cases, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    if len(sys.argv) == 3 and sys.argv[1] == "--write":
        write_cases(sys.argv[2])
        sys.exit(0)
    texts = [
        "a plain gray background with 2 objects",
        "large red circle, top left",
        "small blue band, vertical, center",
        "smooth solid surface with crisp clean edges",
        "fine striped texture with sharp alternating edges",
    ]
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 2024
    for t in corrupt(texts, 0.3, seed):
        print(t)
    ten = "one two three four five six seven eight nine ten"
    print([i for i, w in enumerate(corrupt([ten], 0.3, 99)[0].split(" ")) if w == "None"])
