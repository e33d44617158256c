from setuptools import setup, find_packages

setup(
    name="apsde",
    version="0.1.0",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.9",
    install_requires=["numpy", "scipy", "pandas", "sympy"],
    entry_points={"console_scripts": ["apsde=src.ui.cli:main"]},
)
