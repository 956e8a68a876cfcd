"""Running-product alpha-bar values for linear beta schedules (mpmath, 50 digits)."""
import mpmath as mp

mp.mp.dps = 50


def alpha_bars(T, b0, b1):
    out, run = [], mp.mpf(1)
    for t in range(T):
        frac = mp.mpf(0) if T == 1 else mp.mpf(t) / (T - 1)
        beta = mp.mpf(b0) + (mp.mpf(b1) - mp.mpf(b0)) * frac
        run *= 1 - beta
        out.append(run)
    return out


if __name__ == "__main__":
    ab = alpha_bars(1000, "1e-4", "0.02")
    for t in (0, 249, 499, 999):
        print(t, mp.nstr(ab[t], 17))
