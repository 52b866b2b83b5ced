import numpy as np
import pytest

from tyurin_lab import build_curve

QUINTIC = [0, -1, 0, 0, 0, 1]  # y^2 = x^5 - x, genus 2


@pytest.fixture(scope="session")
def ctx():
    return build_curve(QUINTIC, infinity_x=3.0)
