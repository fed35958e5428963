from hypothesis import HealthCheck, settings

# numba compiles on first call; the first example of a property would blow any deadline
settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: desk-scale acceptance experiments (minutes)")
