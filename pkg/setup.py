from setuptools import setup, find_packages

setup(
    name="minibus",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "python-dotenv>=1.0.0",
        "pandas>=2.0.0",
        "numpy>=1.24.0",
        "pytz>=2023.3",
        "cryptography>=42.0.0",
    ],
    extras_require={"test": ["pytest>=7.4.0"]},
    entry_points={"console_scripts": ["minibus=src.tooling.cli:main"]},
    python_requires=">=3.11",
)
