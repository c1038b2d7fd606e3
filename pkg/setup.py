from setuptools import setup, find_packages

setup(
    name='interval-sar',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=['numpy>=1.24', 'scipy>=1.10', 'pandas>=2.0', 'libpysal>=4.7', 'esda>=2.4'],
    entry_points={
        'console_scripts': [
            'interval-sar=interval_sar.cli:main'
        ]
    },
    author="Daniel T Sasser II",
    description="Constrained spatial autoregressive regression for interval-valued data",
    long_description=open('README.md', encoding='utf-8').read(),
    long_description_content_type="text/markdown",
    python_requires=">=3.10"
)
