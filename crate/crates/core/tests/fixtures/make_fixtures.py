"""Regenerate the CSV fixtures used by the integration tests.

Prices follow a GARCH(1,1) with normal shocks; the expected returns are
computed here with Python's math.log, independently of the Rust code.
"""

import datetime
import math
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent


def garch_prices(n, seed):
    rng = random.Random(seed)
    omega, alpha, beta = 0.1, 0.1, 0.8
    s2 = omega / (1 - alpha - beta)
    y_prev = 0.0
    price = 100.0
    prices = [price]
    for _ in range(n - 1):
        s2 = omega + alpha * y_prev * y_prev + beta * s2
        y = math.sqrt(s2) * rng.gauss(0.0, 1.0)
        # Four decimals like a quoted exchange rate.
        price = round(price * math.exp(y / 100.0), 4)
        prices.append(price)
        y_prev = y
    return prices


def business_days(n, start):
    d = start
    out = []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += datetime.timedelta(days=1)
    return out


def main():
    n = 1001
    prices = garch_prices(n, 20240101)
    dates = business_days(n, datetime.date(2015, 1, 5))
    with open(HERE / "prices_1001.csv", "w") as f:
        f.write("date,price\n")
        for d, p in zip(dates, prices):
            f.write(f"{d},{p:.4f}\n")
    with open(HERE / "returns_expected.csv", "w") as f:
        f.write("date,return\n")
        for i in range(1, n):
            r = 100.0 * math.log(prices[i] / prices[i - 1])
            f.write(f"{dates[i]},{r:.9e}\n")


if __name__ == "__main__":
    main()
