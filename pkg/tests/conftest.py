# tests/conftest.py
def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: полные прогоны свойств на тысячах случайных входов (-m 'not slow' пропускает)"
    )
