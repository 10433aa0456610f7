import pytest

from canbone import fixtures, place


@pytest.fixture(scope="session")
def df1_matrix():
    return fixtures.df1_matrix()


@pytest.fixture(scope="session")
def df1_topo():
    return fixtures.df1_topology()


@pytest.fixture(scope="session")
def df1_placement(df1_matrix, df1_topo):
    return place(df1_matrix, df1_topo)


@pytest.fixture(scope="session")
def df2_pair():
    return fixtures.df2()
