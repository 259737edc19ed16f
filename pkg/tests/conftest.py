def pytest_configure(config):
    config.addinivalue_line("markers", "slow: longer Monte Carlo runs")
    config.addinivalue_line("markers", "acceptance: primary acceptance criteria")
