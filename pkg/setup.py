from setuptools import setup, find_packages

setup(
    name="style4d_gaussians",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "python-dotenv>=1.0.0",
        "pandas>=2.2.0",
        "numpy>=1.26.3",
        "scipy>=1.11.0",
        "matplotlib>=3.7.0",
        "Pillow>=9.1.0",
        "PyYAML>=6.0",
        "tqdm>=4.66.0",
        "tabulate>=0.9.0",
        "pytest>=8.0.0"
    ],
    entry_points={"console_scripts": ["g4ds=src.main:main"]},
) 
